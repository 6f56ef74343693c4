"""
Line-delimited JSON metrics streams and tabular reports.

A stream is one header line, then one line per training step::

    {"type": "header", "format": "evpo-metrics/1", "fields": [...], "run": {...}}
    {"type": "step", "step": 1, "method": "EVPO", ...}

Floats are written with ``repr`` precision, so identical runs give
byte-identical files. Run summaries live next to the stream in
``summary.json``; ``report`` recomputes them from the step lines.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import InvalidInputError
from .trainer import MetricsRecord, TrainConfig, summarize

FORMAT = "evpo-metrics/1"
METRICS_FILE = "metrics.jsonl"


class MetricsFormatError(InvalidInputError):
    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.path = path
        self.line = line


def run_header(config: TrainConfig) -> dict:
    return {"type": "header", "format": FORMAT, "fields": list(MetricsRecord.FIELDS),
            "run": {"method": config.method.value, "env": config.env.env_kind.value,
                    "threshold": config.ev_threshold, "seed": config.seed,
                    "intervention": _intervention_label(config)}}


def _intervention_label(config: TrainConfig) -> str:
    iv = config.intervention
    if iv is None:
        return "none"
    name = type(iv).__name__
    arg = next(iter(vars(iv).values()))
    return f"{name}({arg})"


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(", ", ": "), allow_nan=True)


class MetricsWriter:
    """Writes the header on open and flushes after every record, so a run
    that dies mid-way leaves every completed step on disk."""

    def __init__(self, path, config: TrainConfig):
        self.path = Path(path)
        self._fh: IO[str] = open(self.path, "w", encoding="utf-8", newline="\n")
        self._write(run_header(config))

    def _write(self, obj: dict) -> None:
        self._fh.write(_dumps(obj) + "\n")
        self._fh.flush()

    def __call__(self, record: MetricsRecord) -> None:
        self._write({"type": "step", **record.as_dict()})

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class MetricsStream:
    path: Path
    header: dict
    records: list[MetricsRecord]

    @property
    def run(self) -> dict:
        return self.header.get("run", {})


def read_metrics(path) -> MetricsStream:
    """Parse a metrics file; any malformed line raises ``MetricsFormatError``
    carrying its 1-based line number."""
    path = Path(path)
    if path.is_dir():
        path = path / METRICS_FILE
    if not path.is_file():
        raise FileNotFoundError(f"metrics file not found: {path}")
    header = None
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MetricsFormatError(path, lineno, f"not valid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise MetricsFormatError(path, lineno, "expected a JSON object")
            if header is None:
                if obj.get("type") != "header" or obj.get("format") != FORMAT:
                    raise MetricsFormatError(path, lineno, f"expected a {FORMAT} header")
                header = obj
                continue
            if obj.get("type") != "step":
                raise MetricsFormatError(path, lineno, "expected a step record")
            missing = [f for f in header["fields"] if f not in obj]
            if missing:
                raise MetricsFormatError(path, lineno, f"missing fields {missing}")
            records.append(MetricsRecord(**{f: obj[f] for f in MetricsRecord.FIELDS}))
    if header is None:
        raise MetricsFormatError(path, 1, "empty metrics file")
    return MetricsStream(path, header, records)


# --------------------------------------------------------------------------
# reports

def format_table(headers: Sequence[str], rows: Iterable[Sequence]) -> str:
    def cell(v):
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.4f}"
        return str(v)

    body = [[cell(v) for v in r] for r in rows]
    widths = [max(len(h), *(len(r[i]) for r in body)) if body else len(h)
              for i, h in enumerate(headers)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*headers), fmt.format(*("-" * w for w in widths))]
    lines += [fmt.format(*r) for r in body]
    return "\n".join(line.rstrip() for line in lines)


def downsample(values: Sequence[float], points: int = 10) -> list[float]:
    """Means of ``points`` consecutive equal-size chunks."""
    if not values:
        return []
    chunks = np.array_split(np.asarray(values, dtype=float), min(points, len(values)))
    return [float(c.mean()) for c in chunks]


def stream_summary(stream: MetricsStream) -> dict:
    s = summarize(stream.records)
    s.update(method=stream.run.get("method"), env=stream.run.get("env"),
             threshold=stream.run.get("threshold"), seed=stream.run.get("seed"),
             intervention=stream.run.get("intervention", "none"))
    return s


def build_report(paths: Sequence, points: int = 10) -> str:
    """Per-run summaries, trajectories and cross-run comparison tables."""
    if not paths:
        raise InvalidInputError("no metrics files given")
    streams = [read_metrics(p) for p in paths]
    summaries = [stream_summary(s) for s in streams]
    out = []

    out.append("## Runs")
    out.append(format_table(
        ["run", "env", "method", "intervention", "tau", "seed", "best_val", "best_step",
         "final_val", "auc", "gate_first", "gate_last", "median_ev"],
        [[str(st.path.parent.name or st.path), s["env"], s["method"], s["intervention"],
          s["threshold"], s["seed"], s.get("best_val_success"), s.get("best_val_step"),
          s.get("final_val_success"), s.get("train_success_auc"), s.get("gate_first_10pct"),
          s.get("gate_last_10pct"), s.get("median_batch_ev")]
         for st, s in zip(streams, summaries)]))

    out.append("\n## Trajectories (chunk means)")
    for st in streams:
        active = [r for r in st.records if r.phase != "warmup"]
        gate = downsample([r.gate_critic_fraction for r in active], points)
        ev = downsample([r.batch_ev for r in active], points)
        out.append(f"{st.path}")
        out.append("  gate: " + " ".join(f"{v:.3f}" for v in gate))
        out.append("  ev:   " + " ".join(f"{v:.3f}" for v in ev))

    by_key = defaultdict(list)
    for s in summaries:
        by_key[(s["env"], s["method"], s["intervention"])].append(s)
    out.append("\n## Method comparison (seed means)")
    out.append(format_table(
        ["env", "method", "intervention", "runs", "best_val", "final_val", "auc"],
        [[env, method, iv, len(v), _mean(v, "best_val_success"),
          _mean(v, "final_val_success"), _mean(v, "train_success_auc")]
         for (env, method, iv), v in sorted(by_key.items())]))

    evpo = [s for s in summaries if s["method"] == "EVPO"]
    taus = sorted({s["threshold"] for s in evpo})
    if len(taus) > 1:
        by_tau = defaultdict(list)
        for s in evpo:
            by_tau[(s["env"], s["threshold"])].append(s)
        out.append("\n## Threshold sweep (seed means)")
        out.append(format_table(
            ["env", "tau", "runs", "best_val", "gate_last"],
            [[env, tau, len(v), _mean(v, "best_val_success"), _mean(v, "gate_last_10pct")]
             for (env, tau), v in sorted(by_tau.items())]))
    return "\n".join(out) + "\n"


def _mean(rows: list[dict], key: str):
    vals = [r[key] for r in rows if r.get(key) is not None]
    return float(np.mean(vals)) if vals else None
