"""
Run configuration files.

The format is a flat list of ``section.key = value`` lines::

    # comment
    env.kind = FrozenLakeSlippery
    env.max_steps = 30
    train.method = EVPO
    train.ev_threshold = 0.0
    intervention.kind = none
    run.checkpoint_interval = 50

Sections are ``env``, ``train``, ``intervention`` and ``run``. Values are bare
tokens or double-quoted strings; lists (``sweep.thresholds``) are comma
separated. Every error carries the 1-based line and column of the offending
token. ``serialize`` writes every key, so parse -> serialize -> parse is the
identity.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

from .envs import EnvConfig, EnvKind
from .errors import ConfigError
from .trainer import ColdStart, CriticWarmup, Method, NoiseInject, TrainConfig

_KEY_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)+")
CONFIG_SUFFIX = ".conf"

# key -> (type, default); intervention and run keys are not dataclass fields
_ENV_KEYS = {"kind": str, "grid_size": int, "max_steps": int, "hole_count": int,
             "max_rerolls": int}
_TRAIN_KEYS = {f.name: f.type for f in dataclasses.fields(TrainConfig)
               if f.name not in ("env", "intervention")}
_TYPE_NAMES = {"int": int, "float": float, "str": str, "Method": str}
_INTERVENTION_KEYS = {"kind": str, "k": int, "sigma": float, "start_step": int}
_RUN_KEYS = {"name": str, "checkpoint_interval": int}
_SWEEP_KEYS = {"thresholds": "floats", "seeds": "ints"}
INTERVENTION_KINDS = ("none", "cold_start", "warmup", "noise")


def _train_type(name: str):
    t = _TRAIN_KEYS[name]
    return _TYPE_NAMES.get(t, t) if isinstance(t, str) else t


SCHEMA: dict[str, Any] = {}
SCHEMA.update({f"env.{k}": t for k, t in _ENV_KEYS.items()})
SCHEMA.update({f"train.{k}": _train_type(k) for k in _TRAIN_KEYS})
SCHEMA.update({f"intervention.{k}": t for k, t in _INTERVENTION_KEYS.items()})
SCHEMA.update({f"run.{k}": t for k, t in _RUN_KEYS.items()})
SCHEMA.update({f"sweep.{k}": t for k, t in _SWEEP_KEYS.items()})


@dataclass(frozen=True)
class RunSettings:
    """Everything a config file describes: the training config plus run plumbing."""
    train: TrainConfig = field(default_factory=TrainConfig)
    name: str = "run"
    checkpoint_interval: int = 50
    sweep_thresholds: tuple[float, ...] = (-0.2, -0.1, 0.0, 0.1, 0.2)
    sweep_seeds: tuple[int, ...] = (0, 1, 2, 3, 4)


# --------------------------------------------------------------------------
# parsing

def _convert(raw: str, typ, key: str, line: int, col: int):
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ == "floats":
            return tuple(float(x) for x in _split_list(raw))
        if typ == "ints":
            return tuple(int(x) for x in _split_list(raw))
        return raw
    except ValueError:
        kind = typ if isinstance(typ, str) else typ.__name__
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}", line, col) from None


def _split_list(raw: str) -> list[str]:
    body = raw.strip()
    if body.startswith("{") and body.endswith("}") or body.startswith("[") and body.endswith("]"):
        body = body[1:-1]
    return [x.strip() for x in body.split(",") if x.strip()]


def _unquote(raw: str, line: int, col: int) -> str:
    if raw.startswith('"'):
        if len(raw) < 2 or not raw.endswith('"'):
            raise ConfigError("unterminated string", line, col)
        return raw[1:-1].replace('\\"', '"').replace("\\\\", "\\")
    return raw


def parse_pairs(text: str) -> dict[str, tuple[Any, int | None, int | None]]:
    """Parse config text into ``{key: (typed value, line, column)}``."""
    out: dict[str, tuple[Any, int, int]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        indent = len(line) - len(line.lstrip())
        if "=" not in line:
            raise ConfigError("expected 'key = value'", lineno, indent + 1)
        key_part, value_part = line.split("=", 1)
        key = key_part.strip()
        if not _KEY_RE.fullmatch(key):
            raise ConfigError(f"malformed key {key!r} (expected section.name)", lineno, indent + 1)
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}", lineno, indent + 1)
        if key in out:
            raise ConfigError(f"duplicate key {key!r}", lineno, indent + 1)
        vcol = len(key_part) + 2 + (len(value_part) - len(value_part.lstrip()))
        raw = value_part.strip()
        if not raw.startswith('"') and " #" in raw:
            raw = raw.split(" #", 1)[0].rstrip()
        if not raw:
            raise ConfigError(f"{key}: missing value", lineno, vcol)
        out[key] = (_convert(_unquote(raw, lineno, vcol), SCHEMA[key], key, lineno, vcol),
                    lineno, vcol)
    return out


def _build(pairs: dict[str, tuple[Any, int, int]]) -> RunSettings:
    def get(key, default):
        return pairs[key][0] if key in pairs else default

    def fail(key, msg):
        _, line, col = pairs.get(key, (None, None, None))
        raise ConfigError(f"{key}: {msg}", line, col)

    kind_raw = get("env.kind", EnvKind.FROZEN_LAKE.value)
    try:
        kind = EnvKind(kind_raw)
    except ValueError:
        fail("env.kind", f"unknown environment {kind_raw!r}")
    base = EnvConfig.frozen_lake(0) if kind is EnvKind.FROZEN_LAKE else EnvConfig.mini_sokoban(0)
    if kind is EnvKind.FROZEN_LAKE:
        base = replace(base, max_steps=TrainConfig().env.max_steps)
    env_kw = {k: get(f"env.{k}", getattr(base, k)) for k in _ENV_KEYS if k != "kind"}
    try:
        env = replace(base, **env_kw)
    except (ValueError, TypeError) as exc:
        named = [f"env.{k}" for k in env_kw if k in str(exc) and f"env.{k}" in pairs]
        fail(named[0] if named else "env.kind", str(exc))

    ikind = get("intervention.kind", "none")
    if ikind not in INTERVENTION_KINDS:
        fail("intervention.kind", f"expected one of {', '.join(INTERVENTION_KINDS)}")
    if ikind in ("cold_start", "warmup") and "intervention.k" not in pairs:
        fail("intervention.kind", "intervention.k is required")
    if ikind == "noise" and "intervention.sigma" not in pairs:
        fail("intervention.kind", "intervention.sigma is required")
    intervention = {
        "none": None,
        "cold_start": lambda: ColdStart(get("intervention.k", 0)),
        "warmup": lambda: CriticWarmup(get("intervention.k", 0)),
        "noise": lambda: NoiseInject(get("intervention.sigma", 0.0),
                                     get("intervention.start_step", 1)),
    }[ikind]
    try:
        intervention = intervention() if intervention else None
    except ValueError as exc:
        fail(next((k for k in ("intervention.k", "intervention.sigma", "intervention.start_step")
                   if k in pairs), "intervention.kind"), str(exc))

    train_kw = {k: pairs[f"train.{k}"][0] for k in _TRAIN_KEYS if f"train.{k}" in pairs}
    try:
        cfg = TrainConfig(env=env, intervention=intervention, **train_kw)
    except ValueError as exc:
        msg = str(exc)
        named = [k for k in pairs if k.split(".", 1)[0] in ("train", "intervention")
                 and k.split(".", 1)[1] in msg]
        if "Method" in msg:
            named = ["train.method"]
        if not named:
            raise ConfigError(msg) from None
        fail(named[0], msg)

    defaults = RunSettings()
    return RunSettings(
        train=cfg,
        name=get("run.name", defaults.name),
        checkpoint_interval=get("run.checkpoint_interval", defaults.checkpoint_interval),
        sweep_thresholds=get("sweep.thresholds", defaults.sweep_thresholds),
        sweep_seeds=get("sweep.seeds", defaults.sweep_seeds),
    )


def parse_config(text: str, overrides: list[str] | tuple[str, ...] = ()) -> RunSettings:
    """Parse config text and apply ``key=value`` overrides on top.

    Override keys may omit the section when the bare name is unambiguous
    (``ev_threshold=0.1`` means ``train.ev_threshold``).
    """
    pairs = parse_pairs(text)
    for i, item in enumerate(overrides, start=1):
        pairs.update(parse_override(item, i))
    return _build(pairs)


def parse_override(item: str, index: int = 1) -> dict[str, tuple[Any, int, int]]:
    """One ``--set`` argument; errors name the override instead of a file position."""
    if "=" not in item:
        raise ConfigError(f"override #{index} {item!r}: expected KEY=VALUE")
    key, raw = (s.strip() for s in item.split("=", 1))
    if "." not in key:
        matches = [k for k in SCHEMA if k.split(".", 1)[1] == key]
        if len(matches) != 1:
            what = "ambiguous" if matches else "unknown"
            raise ConfigError(f"override #{index}: {what} config key {key!r}")
        key = matches[0]
    text = f"{key} = {raw}"
    try:
        parsed = parse_pairs(text)
    except ConfigError as exc:
        raise ConfigError(f"override #{index} {item!r}: {exc.args[0].split(': ', 1)[-1]}") from None
    return {k: (v, None, None) for k, (v, _, _) in parsed.items()}


# --------------------------------------------------------------------------
# serialization

def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    if hasattr(value, "value"):
        value = value.value
    s = str(value)
    if s == "" or s != s.strip() or "#" in s or s.startswith('"'):
        return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'
    return s


def serialize(settings: RunSettings) -> str:
    """Every key, one per line, in a fixed order."""
    cfg = settings.train
    iv = cfg.intervention
    ikind = {type(None): "none", ColdStart: "cold_start", CriticWarmup: "warmup",
             NoiseInject: "noise"}[type(iv)]
    lines = [f"env.kind = {_fmt(cfg.env.env_kind)}"]
    lines += [f"env.{k} = {_fmt(getattr(cfg.env, k))}" for k in _ENV_KEYS if k != "kind"]
    lines += [f"train.{k} = {_fmt(getattr(cfg, k))}" for k in _TRAIN_KEYS]
    lines.append(f"intervention.kind = {ikind}")
    if isinstance(iv, ColdStart):
        lines.append(f"intervention.k = {iv.k_cold}")
    elif isinstance(iv, CriticWarmup):
        lines.append(f"intervention.k = {iv.k_warm}")
    elif isinstance(iv, NoiseInject):
        lines.append(f"intervention.sigma = {_fmt(float(iv.sigma))}")
        lines.append(f"intervention.start_step = {iv.start_step}")
    lines.append(f"run.name = {_fmt(settings.name)}")
    lines.append(f"run.checkpoint_interval = {settings.checkpoint_interval}")
    lines.append(f"sweep.thresholds = {_fmt(tuple(float(t) for t in settings.sweep_thresholds))}")
    lines.append(f"sweep.seeds = {_fmt(tuple(int(s) for s in settings.sweep_seeds))}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# loading

def bundled_configs() -> list[str]:
    root = resources.files("evpo") / "configs"
    return sorted(p.name[: -len(CONFIG_SUFFIX)] for p in root.iterdir()
                  if p.name.endswith(CONFIG_SUFFIX))


def read_config_text(ref: str) -> str:
    """Read a config given as a file path or a bundled config name."""
    path = Path(ref)
    if path.is_file():
        return path.read_text()
    bundled = resources.files("evpo") / "configs" / (ref + CONFIG_SUFFIX)
    if bundled.is_file():
        return bundled.read_text()
    raise FileNotFoundError(f"no config file or bundled config named {ref!r} "
                            f"(bundled: {', '.join(bundled_configs())})")


def load_config(ref: str | None, overrides=()) -> RunSettings:
    text = read_config_text(ref) if ref else ""
    return parse_config(text, overrides)
