"""
Variance decomposition, explained variance and Kalman-gain arithmetic.

The critic and the batch mean are treated as two noisy estimators of the
true state value. With

    G      = V(s) + eps,    Var(eps)  = r
    V_hat  = V(s) + delta,  Var(delta) = p_a
    Var_s(V(s)) = p_b

the explained variance of the critic is (p_b - p_a) / (p_b + r) and the
minimum-MSE fusion weight on the batch mean is p_a / (p_a + p_b). Both
change sign/side exactly when p_a = p_b.

Every function here is pure; sample variances use the population
denominator (divide by n) in numerator and denominator alike.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import InvalidInputError, UndefinedEVError, UndefinedGainError

# Var(G) below this counts as a degenerate (no-signal) group.
VAR_EPS = 1e-12


class Mode(str, enum.Enum):
    """Baseline chosen for a rollout group."""

    CRITIC = "CriticMode"
    BATCH_MEAN = "BatchMeanMode"


@dataclass(frozen=True)
class GaussianRegime:
    """(p_a, p_b, r) triple of the additive Gaussian model.

    Args:
        p_a: variance of the critic's estimation error.
        p_b: variance of true state values across the batch.
        r: variance of the return given the state.
    """

    p_a: float
    p_b: float
    r: float

    def __post_init__(self):
        for name in ("p_a", "p_b", "r"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise InvalidInputError(f"{name} must be finite and >= 0, got {v!r}")


@dataclass(frozen=True)
class BatchDiagnostics:
    ev: float
    return_mean: float
    return_std: float
    residual_var: float
    return_var: float
    gate: Mode
    threshold: float = 0.0


def _as_pair(returns, values) -> tuple[np.ndarray, np.ndarray]:
    g = np.asarray(returns, dtype=float).ravel()
    v = np.asarray(values, dtype=float).ravel()
    if g.shape != v.shape:
        raise InvalidInputError(
            f"returns and values differ in length ({g.size} vs {v.size})"
        )
    if g.size < 2:
        raise InvalidInputError(f"need at least 2 samples, got {g.size}")
    return g, v


def explained_variance(returns: Sequence[float], values: Sequence[float]) -> float:
    """1 - Var(returns - values) / Var(returns), or 0 when Var(returns) is ~0.

    >>> explained_variance([1, 0, 1, 0], [0, 1, 0, 1])
    -3.0
    """
    g, v = _as_pair(returns, values)
    var_g = float(np.var(g))
    if var_g < VAR_EPS:
        return 0.0
    return 1.0 - float(np.var(g - v)) / var_g


def batch_diagnostics(
    returns: Sequence[float], values: Sequence[float], threshold: float = 0.0
) -> BatchDiagnostics:
    """Full per-group record behind the gating decision.

    The gate is CriticMode only for ``ev > threshold``; a degenerate group
    (constant returns) has ev = 0 and therefore routes to BatchMeanMode for
    the default threshold.
    """
    g, v = _as_pair(returns, values)
    var_g = float(np.var(g))
    resid = float(np.var(g - v))
    if var_g < VAR_EPS:
        ev = 0.0
        gate = Mode.BATCH_MEAN
    else:
        ev = 1.0 - resid / var_g
        gate = Mode.CRITIC if ev > threshold else Mode.BATCH_MEAN
    return BatchDiagnostics(
        ev=ev,
        return_mean=float(np.mean(g)),
        return_std=math.sqrt(var_g),
        residual_var=resid,
        return_var=var_g,
        gate=gate,
        threshold=float(threshold),
    )


def kalman_gain(regime: GaussianRegime) -> float:
    """Optimal weight on the batch mean, p_a / (p_a + p_b)."""
    total = regime.p_a + regime.p_b
    if total <= 0:
        raise UndefinedGainError("kalman gain undefined for p_a + p_b = 0")
    return regime.p_a / total


def population_ev(regime: GaussianRegime) -> float:
    """Closed-form explained variance (p_b - p_a) / (p_b + r)."""
    denom = regime.p_b + regime.r
    if denom <= 0:
        raise UndefinedEVError("explained variance undefined for p_b + r = 0")
    return (regime.p_b - regime.p_a) / denom


def fused_baseline(critic_value, batch_mean, gain: float):
    """Convex combination (1 - gain) * critic_value + gain * batch_mean.

    Works elementwise on arrays. ``gain`` must lie in [0, 1].
    """
    if not 0.0 <= gain <= 1.0:
        raise InvalidInputError(f"gain must be in [0, 1], got {gain!r}")
    if gain == 0.0:
        return critic_value
    if gain == 1.0:
        return batch_mean
    return (1.0 - gain) * critic_value + gain * batch_mean


def theorem1_predicates(regime: GaussianRegime) -> tuple[bool, bool, bool]:
    """(ev <= 0, p_a >= p_b, gain >= 1/2), each evaluated on its own route.

    The ev and gain predicates are evaluated in exact rational arithmetic so
    that float rounding near the boundary cannot split the triple; the
    float entry points still validate the preconditions.
    """
    population_ev(regime)
    kalman_gain(regime)
    p_a, p_b, r = (Fraction(regime.p_a), Fraction(regime.p_b), Fraction(regime.r))
    ev = (p_b - p_a) / (p_b + r)
    gain = p_a / (p_a + p_b)
    return ev <= 0, regime.p_a >= regime.p_b, gain >= Fraction(1, 2)
