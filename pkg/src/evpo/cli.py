"""
Command-line entry point: ``evpo {train,sweep,verify,noise-inject,intervene,report}``.

Run directories are created under ``--out`` (default ``$EVPO_OUT_DIR``, else
``./runs``) and contain ``manifest.json``, ``config.conf``, ``metrics.jsonl``,
``summary.json`` and ``checkpoints/``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunSettings, load_config, serialize, _split_list
from .errors import ConfigError, InvalidInputError
from .metrics import METRICS_FILE, MetricsFormatError, MetricsWriter, build_report, format_table
from .stats import explained_variance
from .agent import TabularAgent
from .trainer import ColdStart, CriticWarmup, Method, NoiseInject, train
from . import synthetic

log = logging.getLogger("evpo")

OUT_ENV = "EVPO_OUT_DIR"
# Test-only mutation hook: when set, `verify` runs with a sign-flipped EV.
FAULT_ENV = "EVPO_FAULT_FLIP_EV"
MAX_SHOWN = 10


@dataclass
class RunManifest:
    run_id: str
    config_snapshot: str
    code_version: str
    seed: int
    output_paths: dict

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(self.__dict__, indent=2) + "\n")

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


def _out_root(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or "runs")


def _unique_dir(root: Path, stem: str) -> tuple[str, Path]:
    root.mkdir(parents=True, exist_ok=True)
    run_id, k = stem, 1
    while True:
        try:
            (root / run_id).mkdir()
            return run_id, root / run_id
        except FileExistsError:
            k += 1
            run_id = f"{stem}-{k}"


def run_one(settings: RunSettings, root: Path, stem: str | None = None,
            init_agent: TabularAgent | None = None) -> tuple[Path, dict]:
    """Train one config into a fresh run directory; returns (directory, summary)."""
    cfg = settings.train
    stem = stem or f"{settings.name}-{cfg.method.value.lower()}-s{cfg.seed}"
    run_id, run_dir = _unique_dir(root, stem)
    ckpt_dir = run_dir / "checkpoints"
    ckpt_dir.mkdir()
    paths = {"metrics": METRICS_FILE, "checkpoints": "checkpoints",
             "final_checkpoint": "checkpoints/final.ckpt", "summary": "summary.json",
             "config": "config.conf"}
    snapshot = serialize(settings)
    (run_dir / "config.conf").write_text(snapshot)
    RunManifest(run_id, snapshot, __version__, cfg.seed, paths).write(run_dir / "manifest.json")

    def checkpoint(step, agent):
        if settings.checkpoint_interval > 0 and step % settings.checkpoint_interval == 0:
            agent.save(ckpt_dir / f"step_{step:06d}.ckpt")

    with MetricsWriter(run_dir / METRICS_FILE, cfg) as writer:
        result = train(cfg, init_agent=init_agent, sink=writer, on_step=checkpoint)
    result.agent.save(run_dir / paths["final_checkpoint"])
    (run_dir / "summary.json").write_text(json.dumps(result.summary, indent=2) + "\n")
    return run_dir, result.summary


def _settings(args) -> RunSettings:
    settings = load_config(args.config, args.set or ())
    if getattr(args, "seed", None) is not None:
        settings = replace(settings, train=replace(settings.train, seed=args.seed))
    return settings


def _print_summary(run_dir: Path, summary: dict) -> None:
    keys = ("best_val_success", "best_val_step", "final_val_success", "train_success_auc",
            "gate_first_10pct", "gate_last_10pct", "median_batch_ev")
    print(f"{run_dir}: " + ", ".join(f"{k}={summary.get(k)}" for k in keys))


# --------------------------------------------------------------------------
# subcommands

def cmd_train(args) -> int:
    settings = _settings(args)
    run_dir, summary = run_one(settings, _out_root(args))
    _print_summary(run_dir, summary)
    return 0


def _sweep_job(job):
    settings, root, stem = job
    return run_one(settings, root, stem)


def _run_jobs(jobs, n_jobs: int):
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(_sweep_job, jobs))
    return [_sweep_job(j) for j in jobs]


def cmd_sweep(args) -> int:
    settings = _settings(args)
    if args.thresholds is not None:
        thresholds = [float(x) for x in _split_list(args.thresholds)]
    else:
        thresholds = list(settings.sweep_thresholds)
    if not thresholds:
        raise InvalidInputError("threshold list is empty")
    if args.seeds is not None:
        seeds = list(range(args.seeds))
    elif args.seed is not None:
        seeds = [args.seed]
    else:
        seeds = list(settings.sweep_seeds)
    base = replace(settings.train, method=Method.EVPO)
    _, sweep_dir = _unique_dir(_out_root(args), f"{settings.name}-sweep")
    jobs = [(replace(settings, train=replace(base, ev_threshold=t, seed=s)), sweep_dir,
             f"tau{t:+g}-s{s}") for t in thresholds for s in seeds]
    results = _run_jobs(jobs, args.jobs)
    rows = [[t, s, summ.get("best_val_success"), summ.get("best_val_step"),
             summ.get("gate_last_10pct")]
            for (t, s), (_, summ) in zip([(t, s) for t in thresholds for s in seeds], results)]
    table = format_table(["threshold", "seed", "best_val", "best_step", "gate_last"], rows)
    means = format_table(["threshold", "mean_best_val"],
                         [[t, float(np.mean([r[2] for r in rows if r[0] == t]))]
                          for t in thresholds])
    text = table + "\n\n" + means + "\n"
    (sweep_dir / "sweep_summary.txt").write_text(text)
    print(text)
    return 0


def cmd_intervene(args) -> int:
    settings = _settings(args)
    iv = ColdStart(args.k) if args.kind == "cold-start" else CriticWarmup(args.k)
    settings = replace(settings, train=replace(settings.train, method=Method.PPO, intervention=iv))
    run_dir, summary = run_one(settings, _out_root(args),
                               f"{settings.name}-{args.kind}{args.k}-s{settings.train.seed}")
    _print_summary(run_dir, summary)
    return 0


def cmd_noise_inject(args) -> int:
    settings = _settings(args)
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    agent = TabularAgent.load(ckpt)
    sigmas = [float(x) for x in _split_list(args.sigma)]
    for sigma in sigmas:
        cfg = replace(settings.train, intervention=NoiseInject(sigma, args.start_step))
        run_dir, summary = run_one(replace(settings, train=cfg), _out_root(args),
                                   f"{settings.name}-noise{sigma:g}-s{cfg.seed}", agent)
        _print_summary(run_dir, summary)
    return 0


def cmd_report(args) -> int:
    paths = []
    for p in args.paths:
        p = Path(p)
        if p.is_dir() and not (p / METRICS_FILE).is_file():
            paths += sorted(p.glob(f"**/{METRICS_FILE}"))
        else:
            paths.append(p)
    if not paths:
        raise InvalidInputError("no metrics files found")
    text = build_report(paths, args.points)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


SUITES = ("theorem1", "closed-form", "variance", "gain")


def _verify_suite(name: str, ev_fn) -> tuple[bool, list[dict]]:
    if name == "theorem1":
        rep = synthetic.verify_theorem1(synthetic.theorem1_grid(), ev_fn=ev_fn)
        return rep.passed, rep.records()
    if name == "closed-form":
        rep = synthetic.verify_closed_form(synthetic.closed_form_grid())
        return rep.passed, rep.records()
    if name == "variance":
        reps = [synthetic.verify_variance_guarantee(r, rng=np.random.default_rng(10 + i))
                for i, r in enumerate(synthetic.VARIANCE_REGIMES)]
        return all(r.passed for r in reps), [r.record() for r in reps]
    reps = [synthetic.verify_gain_optimality(r, rng=np.random.default_rng(20 + i))
            for i, r in enumerate(synthetic.GAIN_REGIMES)]
    return all(r.passed for r in reps), [r.record() for r in reps]


def cmd_verify(args) -> int:
    suites = SUITES if args.suite == "all" else (args.suite,)
    ev_fn = explained_variance
    if os.environ.get(FAULT_ENV):
        log.warning("%s is set: EV sign is flipped", FAULT_ENV)
        ev_fn = lambda g, v: -explained_variance(g, v)  # noqa: E731
    ok_all = True
    records = []
    for name in suites:
        ok, recs = _verify_suite(name, ev_fn)
        ok_all &= ok
        records += recs
        print(f"{name}: {'PASS' if ok else 'FAIL'}")
        shown = 0
        for r in recs:
            failed = r.get("passed") is False or r.get("ok") is False or r["check"].endswith("violation")
            if failed:
                shown += 1
                if shown <= MAX_SHOWN:
                    print("  failing: " + json.dumps(r))
                elif shown == MAX_SHOWN + 1:
                    print("  (further failures omitted; see --out)")
            elif r["check"] == "gain":
                print(f"  p_a={r['p_a']} p_b={r['p_b']} r={r['r']}: minimizing gain "
                      f"{r['minimizing_gain']:.2f} (optimal {r['optimal_gain']:.4f})")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "verify.jsonl", "w") as fh:
            for r in records:
                fh.write(json.dumps(r) + "\n")
    return 0 if ok_all else 1


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evpo", description=__doc__.strip().splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_args(p, seed=True):
        p.add_argument("--config", help="config file path or bundled config name")
        if seed:
            p.add_argument("--seed", type=int, help="master seed (overrides train.seed)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="config override, repeatable (e.g. ev_threshold=0.1)")
        p.add_argument("--out", help=f"output root (default ${OUT_ENV} or ./runs)")

    p = sub.add_parser("train", help="train one run")
    run_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="EVPO threshold sweep over seeds")
    run_args(p)
    p.add_argument("--thresholds", help='comma list, e.g. "{-0.2,-0.1,0,0.1,0.2}"')
    p.add_argument("--seeds", type=int, help="number of seeds (0..n-1)")
    p.add_argument("--jobs", type=int, default=1, help="parallel run slots")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="synthetic Gaussian-model checks")
    p.add_argument("suite", nargs="?", default="all", choices=SUITES + ("all",))
    p.add_argument("--out", help="directory for verify.jsonl")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("noise-inject", help="continue a checkpoint with noisy critic reads")
    run_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sigma", required=True, help="noise std, or a comma list")
    p.add_argument("--start-step", type=int, default=1)
    p.set_defaults(func=cmd_noise_inject)

    p = sub.add_parser("intervene", help="PPO with cold-start or critic warmup")
    run_args(p)
    p.add_argument("--kind", required=True, choices=("cold-start", "warmup"))
    p.add_argument("--k", type=int, required=True, help="k_cold or k_warm steps")
    p.set_defaults(func=cmd_intervene)

    p = sub.add_parser("report", help="tabular summaries of metrics files")
    p.add_argument("paths", nargs="*", help="metrics files or run/sweep directories")
    p.add_argument("--out", help="also write the report to this file")
    p.add_argument("--points", type=int, default=10, help="trajectory points per run")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
    except MetricsFormatError as exc:
        print(f"metrics error: {exc}", file=sys.stderr)
    except (InvalidInputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    except Exception as exc:  # mid-run failure: metrics already on disk are kept
        log.exception("run failed")
        print(f"error: {exc}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
