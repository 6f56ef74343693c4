"""
Monte Carlo checks on the additive Gaussian model

    V ~ N(mu_v, p_b),   V_hat = V + delta, delta ~ N(0, p_a),   G = V + eps, eps ~ N(0, r)

covering the sign equivalence ev <= 0 <=> p_a >= p_b <=> gain >= 1/2, the
closed form of the explained variance, the optimal fusion gain, and the
variance of EV-gated advantages.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from .errors import InvalidInputError
from .stats import (GaussianRegime, explained_variance, fused_baseline, kalman_gain,
                    population_ev, theorem1_predicates)


class SyntheticDraw(NamedTuple):
    true_value: float
    critic_value: float
    observed_return: float


@dataclass(frozen=True, eq=False)
class SyntheticBatch:
    true_value: np.ndarray
    critic_value: np.ndarray
    observed_return: np.ndarray

    def __len__(self) -> int:
        return len(self.true_value)

    def __getitem__(self, i: int) -> SyntheticDraw:
        return SyntheticDraw(float(self.true_value[i]), float(self.critic_value[i]),
                             float(self.observed_return[i]))


def _orthogonalize(z: np.ndarray) -> np.ndarray:
    """Center the columns of ``z`` and make them mutually orthogonal in-sample.

    Gram-Schmidt in column order; every column keeps the sample standard
    deviation it had after centering, so only the cross-moments are fixed.
    """
    z = z - z.mean(axis=0)
    norms = np.linalg.norm(z, axis=0)
    q, _ = np.linalg.qr(z)
    return q * norms


def sample_batch(regime: GaussianRegime, n: int, rng: np.random.Generator,
                 mu_v: float = 0.0, orthogonal: bool = False) -> SyntheticBatch:
    """Draw ``n`` independent (true value, critic value, return) triples.

    With ``orthogonal=True`` the three noise streams have exactly zero
    in-sample cross-covariance (sample variances stay random).
    """
    if n < 2:
        raise InvalidInputError("n must be >= 2")
    z = rng.standard_normal((n, 3))
    if orthogonal:
        z = _orthogonalize(z)
    v = mu_v + np.sqrt(regime.p_b) * z[:, 0]
    critic = v + np.sqrt(regime.p_a) * z[:, 1]
    ret = v + np.sqrt(regime.r) * z[:, 2]
    return SyntheticBatch(v, critic, ret)


def sample_ev(batch: SyntheticBatch,
              ev_fn: Callable[[np.ndarray, np.ndarray], float] = explained_variance) -> float:
    return ev_fn(batch.observed_return, batch.critic_value)


def log_uniform_regimes(count: int, rng: np.random.Generator, low: float = 1e-3,
                        high: float = 1e3) -> list[GaussianRegime]:
    x = np.exp(rng.uniform(np.log(low), np.log(high), size=(count, 3)))
    return [GaussianRegime(*row) for row in x]


def in_boundary_band(regime: GaussianRegime, band_eps: float = 0.05) -> bool:
    return abs(regime.p_a - regime.p_b) < band_eps * (regime.p_a + regime.p_b)


# --------------------------------------------------------------------------
# sign equivalence

@dataclass
class Theorem1Report:
    n_regimes: int
    n_sign_tested: int
    n_boundary: int
    samples_per_regime: int
    violations: list[dict] = field(default_factory=list)
    assumption: str = "critic error independent of return noise"

    @property
    def passed(self) -> bool:
        return not self.violations

    def records(self) -> list[dict]:
        head = {"check": "theorem1", "passed": self.passed, "n_regimes": self.n_regimes,
                "n_sign_tested": self.n_sign_tested, "n_boundary": self.n_boundary,
                "samples_per_regime": self.samples_per_regime,
                "n_violations": len(self.violations), "assumption": self.assumption}
        return [head] + [{"check": "theorem1_violation", **v} for v in self.violations]


def verify_theorem1(regimes: Sequence[GaussianRegime], n: int = 8192,
                    rng: np.random.Generator | None = None, band_eps: float = 0.05,
                    ev_fn: Callable = explained_variance) -> Theorem1Report:
    """Check ev <= 0 <=> p_a >= p_b <=> gain >= 1/2 on every regime.

    Regimes outside the band |p_a - p_b| < band_eps * (p_a + p_b) get a
    finite-sample sign test: the sample EV of ``n`` orthogonalized draws must
    agree in sign with p_b - p_a and with the gain-vs-1/2 comparison. Regimes
    inside the band are checked in closed form only.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    report = Theorem1Report(len(regimes), 0, 0, n)
    for reg in regimes:
        ev_nonpos, pa_ge_pb, gain_ge_half = theorem1_predicates(reg)
        if not (ev_nonpos == pa_ge_pb == gain_ge_half):
            report.violations.append({**asdict(reg), "kind": "closed_form",
                                      "population_ev": population_ev(reg),
                                      "gain": kalman_gain(reg)})
            continue
        if in_boundary_band(reg, band_eps):
            report.n_boundary += 1
            continue
        report.n_sign_tested += 1
        ev_hat = sample_ev(sample_batch(reg, n, rng, orthogonal=True), ev_fn)
        gain = kalman_gain(reg)
        if not ((ev_hat <= 0) == (reg.p_a >= reg.p_b) == (gain >= 0.5)):
            report.violations.append({**asdict(reg), "kind": "sample_sign",
                                      "sample_ev": ev_hat, "population_ev": population_ev(reg),
                                      "gain": gain})
    return report


def theorem1_grid(count: int = 10_000, seed: int = 20240601,
                  band_eps: float = 0.05) -> list[GaussianRegime]:
    """``count`` log-uniform regimes in [1e-3, 1e3]^3 outside the boundary band,
    plus the exact-boundary regimes (p_a = p_b) checked in closed form."""
    rng = np.random.default_rng(seed)
    out: list[GaussianRegime] = []
    while len(out) < count:
        out.extend(r for r in log_uniform_regimes(count, rng)
                   if not in_boundary_band(r, band_eps))
    out = out[:count]
    out += [GaussianRegime(p, p, r) for p in (1e-3, 1.0, 1e3) for r in (1e-3, 1.0, 1e3)]
    return out


# --------------------------------------------------------------------------
# closed form of the explained variance

@dataclass
class ClosedFormReport:
    rows: list[dict]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(r["ok"] for r in self.rows)

    def records(self) -> list[dict]:
        return [{"check": "closed_form", "passed": self.passed, "tolerance": self.tolerance,
                 "n_regimes": len(self.rows)}] + [{"check": "closed_form_regime", **r}
                                                 for r in self.rows]


def verify_closed_form(regimes: Iterable[GaussianRegime], n: int = 1_000_000,
                       rng: np.random.Generator | None = None,
                       tol: float = 0.01) -> ClosedFormReport:
    """Plain Monte Carlo sample EV against (p_b - p_a) / (p_b + r)."""
    rng = np.random.default_rng(1) if rng is None else rng
    rows = []
    for reg in regimes:
        ev_hat = sample_ev(sample_batch(reg, n, rng))
        ev = population_ev(reg)
        rows.append({**asdict(reg), "sample_ev": ev_hat, "population_ev": ev,
                     "abs_err": abs(ev_hat - ev), "ok": abs(ev_hat - ev) < tol})
    return ClosedFormReport(rows, tol)


CLOSED_FORM_P = (0.1, 0.2, 0.3, 0.4, 0.5)
CLOSED_FORM_R = (0.5, 1.0, 2.0)


def closed_form_grid() -> list[GaussianRegime]:
    """5 x 5 x 3 grid whose worst-case MC standard error at n = 1e6 is about 2.5e-3."""
    return [GaussianRegime(a, b, r) for a in CLOSED_FORM_P for b in CLOSED_FORM_P
            for r in CLOSED_FORM_R]


# --------------------------------------------------------------------------
# gain optimality

@dataclass
class GainReport:
    regime: GaussianRegime
    gains: list[float]
    mse: list[float]
    optimal_gain: float
    best_grid_gain: float
    nearest_grid_gain: float

    @property
    def passed(self) -> bool:
        return self.best_grid_gain == self.nearest_grid_gain

    @property
    def convex(self) -> bool:
        second = np.diff(self.mse, 2)
        return bool(np.all(second >= -1e-3 * max(self.mse)))

    def record(self) -> dict:
        return {"check": "gain", **asdict(self.regime), "passed": self.passed,
                "optimal_gain": self.optimal_gain, "minimizing_gain": self.best_grid_gain,
                "nearest_grid_gain": self.nearest_grid_gain, "convex": self.convex}


def default_gain_grid(step: float = 0.05) -> np.ndarray:
    return np.round(np.arange(0.0, 1.0 + step / 2, step), 10)


def verify_gain_optimality(regime: GaussianRegime, gain_grid: Sequence[float] | None = None,
                           n: int = 1_000_000,
                           rng: np.random.Generator | None = None) -> GainReport:
    """Empirical MSE of the fused baseline against the true value over a gain grid."""
    rng = np.random.default_rng(2) if rng is None else rng
    grid = default_gain_grid() if gain_grid is None else np.asarray(gain_grid, dtype=float)
    k_star = kalman_gain(regime)
    batch = sample_batch(regime, n, rng)
    g_bar = float(batch.observed_return.mean())
    mse = [float(np.mean((fused_baseline(batch.critic_value, g_bar, float(k))
                          - batch.true_value) ** 2)) for k in grid]
    best = float(grid[int(np.argmin(mse))])
    nearest = float(grid[int(np.argmin(np.abs(grid - k_star)))])
    return GainReport(regime, [float(k) for k in grid], mse, k_star, best, nearest)


GAIN_REGIMES = (
    GaussianRegime(1, 3, 1), GaussianRegime(0, 1, 1), GaussianRegime(1, 0, 1),
    GaussianRegime(2, 1, 1), GaussianRegime(1, 2, 1), GaussianRegime(1, 1, 1),
    GaussianRegime(3, 1, 0.5), GaussianRegime(1, 4, 2), GaussianRegime(0.2, 0.6, 0.1),
)


# --------------------------------------------------------------------------
# variance of gated advantages

@dataclass
class VarianceReport:
    regime: GaussianRegime
    group_size: int
    n_groups: int
    var_ppo: float
    var_batch_mean: float
    var_evpo: float
    var_evpo_corrected: float
    se_diff: float
    critic_mode_fraction: float
    predicted: float
    finite_group_factor: float
    resolvable: bool

    @property
    def dominates(self) -> bool:
        return self.var_evpo <= min(self.var_ppo, self.var_batch_mean) + 3 * self.se_diff

    @property
    def matches_prediction(self) -> bool:
        return abs(self.var_evpo_corrected - self.predicted) <= 0.05 * self.predicted

    @property
    def passed(self) -> bool:
        return self.dominates and (self.matches_prediction or not self.resolvable)

    def record(self) -> dict:
        d = {"check": "variance", **asdict(self.regime)}
        d.update({k: v for k, v in asdict(self).items() if k != "regime"})
        d.update(dominates=self.dominates, matches_prediction=self.matches_prediction,
                 passed=self.passed)
        return d


def verify_variance_guarantee(regime: GaussianRegime, group_size: int = 64,
                              n_groups: int = 10_000,
                              rng: np.random.Generator | None = None,
                              resolve_frac: float = 0.2) -> VarianceReport:
    """Empirical variance of critic, batch-mean and EV-gated advantages.

    Every group draws ``group_size`` independent states. The batch-mean
    advantage variance carries a (M - 1) / M finite-group factor;
    ``var_evpo_corrected`` undoes it on the groups that chose the batch mean
    before the comparison with r + min(p_a, p_b).
    """
    if group_size < 2:
        raise InvalidInputError("group_size must be >= 2")
    rng = np.random.default_rng(3) if rng is None else rng
    m = group_size
    z = rng.standard_normal((3, n_groups, m))
    v = np.sqrt(regime.p_b) * z[0]
    critic = v + np.sqrt(regime.p_a) * z[1]
    ret = v + np.sqrt(regime.r) * z[2]

    adv_ppo = ret - critic
    adv_bm = ret - ret.mean(axis=1, keepdims=True)
    var_g = ret.var(axis=1)
    resid = adv_ppo.var(axis=1)
    safe = np.where(var_g < 1e-12, 1.0, var_g)
    ev = np.where(var_g < 1e-12, 0.0, 1.0 - resid / safe)
    use_critic = ev > 0
    adv_evpo = np.where(use_critic[:, None], adv_ppo, adv_bm)

    def second_moments(a):
        return ((a - a.mean()) ** 2).mean(axis=1)

    m_ppo, m_bm, m_evpo = map(second_moments, (adv_ppo, adv_bm, adv_evpo))
    factor = (m - 1) / m
    m_evpo_corr = np.where(use_critic, m_evpo, m_evpo / factor)
    m_min = m_ppo if m_ppo.mean() <= m_bm.mean() else m_bm
    diff = m_evpo - m_min
    return VarianceReport(
        regime=regime, group_size=m, n_groups=n_groups,
        var_ppo=float(m_ppo.mean()), var_batch_mean=float(m_bm.mean()),
        var_evpo=float(m_evpo.mean()), var_evpo_corrected=float(m_evpo_corr.mean()),
        se_diff=float(diff.std(ddof=1) / np.sqrt(n_groups)),
        critic_mode_fraction=float(use_critic.mean()),
        predicted=regime.r + min(regime.p_a, regime.p_b),
        finite_group_factor=factor,
        resolvable=abs(regime.p_a - regime.p_b) >= resolve_frac * (regime.p_a + regime.p_b),
    )


VARIANCE_REGIMES = (
    GaussianRegime(4, 1, 1), GaussianRegime(0, 1, 1), GaussianRegime(1, 1, 1),
    GaussianRegime(1, 4, 1), GaussianRegime(2, 0.5, 0.5), GaussianRegime(0.5, 2, 2),
    GaussianRegime(0.1, 1, 0.2), GaussianRegime(3, 0.2, 0.3),
)
