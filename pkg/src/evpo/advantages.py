"""
Advantage estimators for a rollout group under terminal-only reward, gamma = 1.

All four estimators have the form ``A[m][t] = G_m - b[m][t]`` (GRPO adds a
per-group scale):

    ppo          b = critic value at s_t
    grpo         b = group mean return, result divided by group return std
    gae          backward TD(lambda) recursion; telescopes to ppo at gamma = lambda = 1
    evpo         ppo if the step-pooled group EV exceeds the threshold,
                 else the unnormalized group-mean baseline

The group EV pools every (trajectory, step) pair: residuals G_m - v[m][t]
against returns G_m repeated once per step. Trajectories sharing a start
state would otherwise give a critic no way to explain anything.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import InvalidInputError
from .stats import BatchDiagnostics, Mode, batch_diagnostics

GRPO_STD_EPS = 1e-8


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One episode. ``values`` holds the critic reads V(s_t), one per state."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    terminal_return: float

    def __post_init__(self):
        for name, dtype in (("states", np.int64), ("actions", np.int64),
                            ("rewards", float), ("values", float)):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=dtype))
        n = len(self.states)
        if n < 1:
            raise InvalidInputError("trajectory needs at least one step")
        if not (len(self.actions) == len(self.rewards) == len(self.values) == n):
            raise InvalidInputError(
                "states, actions, rewards and values must have equal length"
            )
        if np.any(self.rewards[:-1] != 0.0):
            raise InvalidInputError("reward must be terminal-only")
        if float(self.rewards.sum()) != float(self.terminal_return):
            raise InvalidInputError("terminal_return must equal the reward sum")

    def __len__(self) -> int:
        return len(self.states)

    def with_values(self, values) -> "Trajectory":
        return replace(self, values=np.asarray(values, dtype=float))


@dataclass(frozen=True, eq=False)
class RolloutGroup:
    task_seed: int
    trajectories: tuple[Trajectory, ...]

    def __post_init__(self):
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        if len(self.trajectories) < 2:
            raise InvalidInputError("a rollout group needs M >= 2 trajectories")
        first = int(self.trajectories[0].states[0])
        if any(int(tr.states[0]) != first for tr in self.trajectories):
            raise InvalidInputError("trajectories in a group must share the initial state")

    @property
    def returns(self) -> np.ndarray:
        return np.array([tr.terminal_return for tr in self.trajectories], dtype=float)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([len(tr) for tr in self.trajectories])

    def pooled(self) -> tuple[np.ndarray, np.ndarray]:
        """Returns repeated per step, and the concatenated critic values."""
        g = np.repeat(self.returns, self.lengths)
        v = np.concatenate([tr.values for tr in self.trajectories])
        return g, v

    def with_values(self, values: Sequence[np.ndarray]) -> "RolloutGroup":
        trajs = tuple(tr.with_values(v) for tr, v in zip(self.trajectories, values))
        return RolloutGroup(self.task_seed, trajs)


@dataclass(frozen=True, eq=False)
class AdvantageSet:
    per_step: list[np.ndarray]
    mode: Mode
    diagnostics: BatchDiagnostics = field(repr=False)

    def flat(self) -> np.ndarray:
        return np.concatenate(self.per_step)


def group_diagnostics(group: RolloutGroup, threshold: float = 0.0) -> BatchDiagnostics:
    g, v = group.pooled()
    return batch_diagnostics(g, v, threshold)


def _critic_mode(group: RolloutGroup) -> list[np.ndarray]:
    return [tr.terminal_return - tr.values for tr in group.trajectories]


def _batch_mean_mode(group: RolloutGroup, scale: float = 1.0) -> list[np.ndarray]:
    g = group.returns
    adv = (g - g.mean()) / scale
    return [np.full(len(tr), a) for tr, a in zip(group.trajectories, adv)]


def ppo_advantages(group: RolloutGroup) -> AdvantageSet:
    return AdvantageSet(_critic_mode(group), Mode.CRITIC, group_diagnostics(group))


def grpo_advantages(group: RolloutGroup, eps: float = GRPO_STD_EPS) -> AdvantageSet:
    """(G_i - mean) / (std + eps), broadcast over every step of trajectory i."""
    std = float(np.std(group.returns))
    return AdvantageSet(
        _batch_mean_mode(group, std + eps), Mode.BATCH_MEAN, group_diagnostics(group)
    )


def batch_mean_advantages(group: RolloutGroup) -> AdvantageSet:
    """G_i - mean with no std normalization (the cold-start / EVPO fallback)."""
    return AdvantageSet(_batch_mean_mode(group), Mode.BATCH_MEAN, group_diagnostics(group))


def gae_advantages(group: RolloutGroup, gamma: float = 1.0, lam: float = 1.0) -> AdvantageSet:
    """Generalized advantage estimation with a zero terminal bootstrap."""
    if not (0.0 <= gamma <= 1.0 and 0.0 <= lam <= 1.0):
        raise InvalidInputError("gamma and lambda must lie in [0, 1]")
    out = []
    for tr in group.trajectories:
        v = tr.values
        v_next = np.append(v[1:], 0.0)
        delta = tr.rewards + gamma * v_next - v
        adv = np.empty_like(delta)
        acc = 0.0
        for t in range(len(delta) - 1, -1, -1):
            acc = delta[t] + gamma * lam * acc
            adv[t] = acc
        out.append(adv)
    return AdvantageSet(out, Mode.CRITIC, group_diagnostics(group))


def evpo_advantages(group: RolloutGroup, threshold: float = 0.0) -> AdvantageSet:
    """Critic baseline if the group EV exceeds ``threshold``, else the group mean."""
    diag = group_diagnostics(group, threshold)
    if diag.gate is Mode.CRITIC:
        return AdvantageSet(_critic_mode(group), Mode.CRITIC, diag)
    return AdvantageSet(_batch_mean_mode(group), Mode.BATCH_MEAN, diag)


def mode_variances(group: RolloutGroup) -> tuple[float, float]:
    """Step-pooled variance of critic-mode and batch-mean-mode advantages.

    The batch-mean variance equals the pooled return variance, so the critic
    mode is strictly lower exactly when the group EV is positive.
    """
    g, v = group.pooled()
    return float(np.var(g - v)), float(np.var(g))
