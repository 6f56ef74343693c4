"""
Tabular softmax actor and tabular critic.

The actor maximizes the step-mean clipped surrogate

    J = mean_t min(ratio_t * A_t, clip(ratio_t, 1 - clip_low, 1 + clip_high) * A_t)
        + entropy_coef * mean_t H(pi(.|s_t))
        - kl_coef * mean_t KL(pi(.|s_t) || pi_ref(.|s_t))

by plain gradient ascent on the logits table, with the gradient computed in
closed form. The critic regresses every visited state on the observed return
with a squared loss.
"""

from __future__ import annotations

import copy
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .advantages import AdvantageSet, RolloutGroup
from .errors import InvalidInputError

CHECKPOINT_MAGIC = b"EVPOAGT1"


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class UpdateReport:
    actor_grad_norm: float = 0.0
    critic_loss: float = 0.0
    mean_ratio: float = 1.0
    clip_fraction: float = 0.0


@dataclass
class TabularAgent:
    """Logits table ``(n_states, n_actions)`` plus a value table ``(n_states,)``.

    Rows that were never updated hold zero logits, i.e. the uniform policy.
    ``value_noise`` > 0 perturbs every critic read with fresh Gaussian noise;
    the stored table is never touched by the noise.
    """

    logits: np.ndarray
    values: np.ndarray
    actor_lr: float = 2.0
    critic_lr: float = 0.1
    clip_low: float = 0.2
    clip_high: float = 0.2
    entropy_coef: float = 0.0
    kl_coef: float = 0.0
    ppo_epochs: int = 1
    precondition: bool = True
    ref_logits: np.ndarray | None = None
    value_noise: float = 0.0
    noise_rng: np.random.Generator | None = None

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.logits.ndim != 2 or self.values.shape != (self.logits.shape[0],):
            raise InvalidInputError("logits must be (S, A) and values (S,)")
        if not (0 < self.clip_low < 1 and 0 < self.clip_high < 1):
            raise InvalidInputError("clip thresholds must lie in (0, 1)")

    @classmethod
    def create(cls, n_states: int, n_actions: int, critic_init: float = 0.0,
               critic_init_std: float = 0.0, rng: np.random.Generator | None = None,
               **hyper) -> "TabularAgent":
        values = np.full(n_states, float(critic_init))
        if critic_init_std > 0:
            if rng is None:
                raise InvalidInputError("critic_init_std > 0 needs an rng")
            values = values + rng.normal(0.0, critic_init_std, n_states)
        return cls(np.zeros((n_states, n_actions)), values, **hyper)

    @property
    def n_states(self) -> int:
        return self.logits.shape[0]

    @property
    def n_actions(self) -> int:
        return self.logits.shape[1]

    def act_distribution(self, state: int) -> np.ndarray:
        """Softmax of the state's logits; uniform for ids outside the table."""
        if not 0 <= state < self.n_states:
            return np.full(self.n_actions, 1.0 / self.n_actions)
        return softmax(self.logits[state])

    def policy_table(self) -> np.ndarray:
        return softmax(self.logits)

    def read_values(self, states, rng: np.random.Generator | None = None) -> np.ndarray:
        v = self.values[np.asarray(states, dtype=np.int64)]
        if self.value_noise > 0:
            rng = rng if rng is not None else self.noise_rng
            v = v + rng.normal(0.0, self.value_noise, v.shape)
        return v

    def copy(self) -> "TabularAgent":
        return copy.deepcopy(self)

    # checkpoint format (little endian):
    #   8 bytes magic, int64 n_states, int64 n_actions,
    #   float64 logits row-major (n_states * n_actions), float64 values (n_states)
    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<qq", self.n_states, self.n_actions))
            fh.write(self.logits.astype("<f8").tobytes(order="C"))
            fh.write(self.values.astype("<f8").tobytes())

    @classmethod
    def load(cls, path, **hyper) -> "TabularAgent":
        data = Path(path).read_bytes()
        if data[:8] != CHECKPOINT_MAGIC:
            raise InvalidInputError(f"{path}: not an agent checkpoint")
        n_states, n_actions = struct.unpack("<qq", data[8:24])
        body = np.frombuffer(data[24:], dtype="<f8")
        if body.size != n_states * (n_actions + 1):
            raise InvalidInputError(f"{path}: truncated checkpoint")
        logits = body[: n_states * n_actions].reshape(n_states, n_actions).astype(float)
        values = body[n_states * n_actions:].astype(float)
        return cls(logits, values, **hyper)


def inject_value_noise(agent: TabularAgent, sigma: float,
                       rng: np.random.Generator) -> TabularAgent:
    """Copy of ``agent`` whose critic reads carry i.i.d. N(0, sigma^2) noise."""
    if sigma < 0:
        raise InvalidInputError("sigma must be >= 0")
    noisy = agent.copy()
    noisy.value_noise = float(sigma)
    noisy.noise_rng = rng
    return noisy


# --------------------------------------------------------------------------
# actor objective

def flatten_batch(groups: Sequence[RolloutGroup], advantages: Sequence[AdvantageSet]):
    """Concatenate (state, action, advantage) over all steps of all groups."""
    if len(groups) != len(advantages):
        raise InvalidInputError("one AdvantageSet per group is required")
    states, actions, adv = [], [], []
    for grp, aset in zip(groups, advantages):
        if len(aset.per_step) != len(grp.trajectories):
            raise InvalidInputError("advantage set does not match group size")
        for tr, a in zip(grp.trajectories, aset.per_step):
            if len(a) != len(tr):
                raise InvalidInputError("advantage length does not match trajectory")
            states.append(tr.states)
            actions.append(tr.actions)
            adv.append(a)
    return np.concatenate(states), np.concatenate(actions), np.concatenate(adv).astype(float)


def surrogate_objective(logits, old_logits, states, actions, adv, clip_low=0.2,
                        clip_high=0.2, entropy_coef=0.0, kl_coef=0.0, ref_logits=None) -> float:
    """Value of the actor objective (used as the finite-difference oracle)."""
    logp = log_softmax(logits[states])
    logp_old = log_softmax(old_logits[states])
    idx = np.arange(len(states))
    ratio = np.exp(logp[idx, actions] - logp_old[idx, actions])
    clipped = np.clip(ratio, 1.0 - clip_low, 1.0 + clip_high)
    obj = np.minimum(ratio * adv, clipped * adv).mean()
    p = np.exp(logp)
    if entropy_coef:
        obj += entropy_coef * (-(p * logp).sum(axis=1)).mean()
    if kl_coef:
        logq = log_softmax(ref_logits[states])
        obj -= kl_coef * (p * (logp - logq)).sum(axis=1).mean()
    return float(obj)


def surrogate_gradient(logits, old_logits, states, actions, adv, clip_low=0.2,
                       clip_high=0.2, entropy_coef=0.0, kl_coef=0.0, ref_logits=None):
    """Analytic gradient of ``surrogate_objective`` w.r.t. the logits table.

    Returns ``(grad, ratio, active)``; ``active`` marks steps whose
    unclipped term is the minimum (the only ones carrying gradient).
    """
    n = len(states)
    grad = np.zeros_like(logits)
    if n == 0:
        return grad, np.ones(0), np.ones(0, dtype=bool)
    logp = log_softmax(logits[states])
    p = np.exp(logp)
    logp_old = log_softmax(old_logits[states])
    idx = np.arange(n)
    ratio = np.exp(logp[idx, actions] - logp_old[idx, actions])
    clipped = np.clip(ratio, 1.0 - clip_low, 1.0 + clip_high)
    active = ratio * adv <= clipped * adv
    coef = np.where(active, ratio * adv, 0.0)

    rows = -coef[:, None] * p
    rows[idx, actions] += coef
    if entropy_coef:
        ent = -(p * logp).sum(axis=1)
        rows += entropy_coef * (-p * (logp + ent[:, None]))
    if kl_coef:
        logq = log_softmax(ref_logits[states])
        diff = logp - logq
        kl = (p * diff).sum(axis=1)
        rows -= kl_coef * p * (diff - kl[:, None])
    np.add.at(grad, states, rows / n)
    return grad, ratio, active


def ppo_update(agent: TabularAgent, groups: Sequence[RolloutGroup],
               advantages: Sequence[AdvantageSet], old_logits: np.ndarray) -> UpdateReport:
    """Gradient ascent on the clipped surrogate, ``agent.ppo_epochs`` passes.

    ``old_logits`` is the behaviour-policy snapshot taken before any update
    in this iteration. The report carries the pre-update gradient norm.
    """
    states, actions, adv = flatten_batch(groups, advantages)
    if old_logits.shape != agent.logits.shape:
        raise InvalidInputError("old_logits snapshot has the wrong shape")
    ref = agent.ref_logits if agent.ref_logits is not None else old_logits
    report = UpdateReport()
    ratios, clip_fracs = [], []
    for epoch in range(agent.ppo_epochs):
        grad, ratio, active = surrogate_gradient(
            agent.logits, old_logits, states, actions, adv, agent.clip_low,
            agent.clip_high, agent.entropy_coef, agent.kl_coef, ref)
        if epoch == 0:
            report.actor_grad_norm = float(np.linalg.norm(grad))
        if len(ratio):
            ratios.append(float(ratio.mean()))
            clip_fracs.append(float(np.mean(~active & (adv != 0))))
        if agent.precondition:
            counts = np.bincount(states, minlength=agent.n_states)
            scale = np.where(counts > 0, len(states) / np.maximum(counts, 1), 0.0)
            grad = grad * scale[:, None]
        agent.logits += agent.actor_lr * grad
    if ratios:
        report.mean_ratio = float(np.mean(ratios))
        report.clip_fraction = float(np.mean(clip_fracs))
    return report


# --------------------------------------------------------------------------
# critic

def critic_loss(agent: TabularAgent, groups: Sequence[RolloutGroup]) -> float:
    states, targets = _critic_batch(groups)
    return float(np.mean((agent.values[states] - targets) ** 2))


def _critic_batch(groups: Sequence[RolloutGroup]):
    if not groups:
        raise InvalidInputError("critic update needs at least one group")
    states = np.concatenate([tr.states for g in groups for tr in g.trajectories])
    targets = np.concatenate([np.full(len(tr), tr.terminal_return)
                              for g in groups for tr in g.trajectories])
    return states, targets


def critic_update(agent: TabularAgent, groups: Sequence[RolloutGroup]) -> UpdateReport:
    """One step on mean((V[s_t] - G)^2) over every visited step.

    The gradient of each table entry is rescaled by (steps / visits of that
    state), so every visited entry moves a fraction ``2 * critic_lr`` of the
    way to its mean observed return regardless of how often it appeared.
    Unvisited entries are unchanged.
    """
    states, targets = _critic_batch(groups)
    n = len(states)
    resid = agent.values[states] - targets
    loss = float(np.mean(resid ** 2))
    grad = np.zeros_like(agent.values)
    np.add.at(grad, states, 2.0 * resid / n)
    counts = np.bincount(states, minlength=agent.n_states)
    visited = counts > 0
    agent.values[visited] -= agent.critic_lr * grad[visited] * n / counts[visited]
    return UpdateReport(critic_loss=loss)
