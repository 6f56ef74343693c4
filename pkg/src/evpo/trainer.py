"""
Training loop: PPO, GRPO and EV-gated training on the tabular agent, plus the
cold-start, critic-warmup and critic-noise interventions.

Each iteration samples ``n_tasks`` task seeds, rolls out ``group_size``
trajectories per task against a frozen policy snapshot, builds per-group
advantages, applies one actor update (skipped during warmup) and one critic
update (always), and emits one ``MetricsRecord``.
"""

from __future__ import annotations

import enum
import logging
from pathlib import Path
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from . import seeding
from .advantages import (AdvantageSet, RolloutGroup, batch_mean_advantages,
                         evpo_advantages, grpo_advantages, mode_variances, ppo_advantages)
from .agent import TabularAgent, critic_update, ppo_update
from .envs import N_ACTIONS, EnvConfig, EnvKind, rollout
from .errors import InvalidInputError
from .stats import Mode, explained_variance

log = logging.getLogger(__name__)


class Method(str, enum.Enum):
    PPO = "PPO"
    GRPO = "GRPO"
    EVPO = "EVPO"


@dataclass(frozen=True)
class ColdStart:
    """Batch-mean baseline for the first ``k_cold`` steps, then plain PPO."""
    k_cold: int

    def __post_init__(self):
        if self.k_cold < 0:
            raise InvalidInputError("k_cold must be >= 0")


@dataclass(frozen=True)
class CriticWarmup:
    """Critic-only updates for ``k_warm`` steps before the actor starts."""
    k_warm: int

    def __post_init__(self):
        if self.k_warm < 0:
            raise InvalidInputError("k_warm must be >= 0")


@dataclass(frozen=True)
class NoiseInject:
    """Gaussian critic-read noise from ``start_step`` on (1-based)."""
    sigma: float
    start_step: int = 1

    def __post_init__(self):
        if not self.sigma >= 0:
            raise InvalidInputError("sigma must be >= 0")
        if self.start_step < 1:
            raise InvalidInputError("start_step must be >= 1")


Intervention = ColdStart | CriticWarmup | NoiseInject | None


@dataclass(frozen=True)
class TrainConfig:
    method: Method = Method.EVPO
    env: EnvConfig = field(default_factory=lambda: EnvConfig.frozen_lake(max_steps=30))
    n_tasks: int = 8
    group_size: int = 16
    iterations: int = 200
    ev_threshold: float = 0.0
    intervention: Intervention = None
    seed: int = 0
    gamma: float = 1.0
    lam: float = 1.0
    actor_lr: float = 3.0
    critic_lr: float = 0.02
    clip_low: float = 0.2
    clip_high: float = 0.2
    entropy_coef: float = 0.0
    kl_coef: float = 0.0
    ppo_epochs: int = 1
    critic_init: float = 0.0
    critic_init_std: float = 0.5
    eval_interval: int = 10
    val_tasks: int = 32
    val_rollouts: int = 16
    task_pool: int = 0

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if self.group_size < 2:
            raise InvalidInputError("group_size (M) must be >= 2")
        if self.n_tasks < 1:
            raise InvalidInputError("n_tasks (N) must be >= 1")
        if self.iterations < 0:
            raise InvalidInputError("iterations must be >= 0")
        if not np.isfinite(self.ev_threshold):
            raise InvalidInputError("ev_threshold must be finite")
        if self.gamma != 1.0 or self.lam != 1.0:
            raise InvalidInputError("the training path requires gamma = lambda = 1")
        if isinstance(self.intervention, (ColdStart, CriticWarmup)) and self.method is not Method.PPO:
            raise InvalidInputError("cold-start and warmup interventions run on PPO")
        if self.eval_interval < 1:
            raise InvalidInputError("eval_interval must be >= 1")

    @property
    def warmup_steps(self) -> int:
        return self.intervention.k_warm if isinstance(self.intervention, CriticWarmup) else 0

    @property
    def total_steps(self) -> int:
        return self.warmup_steps + self.iterations

    def agent_hyper(self) -> dict:
        return dict(actor_lr=self.actor_lr, critic_lr=self.critic_lr, clip_low=self.clip_low,
                    clip_high=self.clip_high, entropy_coef=self.entropy_coef,
                    kl_coef=self.kl_coef, ppo_epochs=self.ppo_epochs)


@dataclass
class MetricsRecord:
    step: int
    method: str
    phase: str
    per_group_ev: list[float]
    batch_ev: float
    gate_critic_fraction: float
    train_success_rate: float
    actor_grad_norm: float
    critic_loss: float
    val_success_rate: float | None
    threshold: float
    var_chosen: list[float]
    var_rejected: list[float]

    FIELDS = ("step", "method", "phase", "per_group_ev", "batch_ev", "gate_critic_fraction",
              "train_success_rate", "actor_grad_norm", "critic_loss", "val_success_rate",
              "threshold", "var_chosen", "var_rejected")

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.FIELDS}


@dataclass
class TrainResult:
    config: TrainConfig
    records: list[MetricsRecord]
    agent: TabularAgent
    summary: dict


def make_agent(config: TrainConfig) -> TabularAgent:
    rng = seeding.stream(config.seed, tag=seeding.TAG_INIT)
    return TabularAgent.create(config.env.n_states, N_ACTIONS, critic_init=config.critic_init,
                               critic_init_std=config.critic_init_std, rng=rng,
                               **config.agent_hyper())


def sample_task_seeds(config: TrainConfig, step: int) -> np.ndarray:
    rng = seeding.stream(config.seed, step, tag=seeding.TAG_TASKS)
    high = config.task_pool if config.task_pool > 0 else seeding.TRAIN_SEED_SPACE
    return rng.integers(0, high, size=config.n_tasks)


def collect_group(env: EnvConfig, task_seed: int, probs: np.ndarray, agent: TabularAgent,
                  master: int, step: int, group: int, group_size: int,
                  noisy: bool = False) -> RolloutGroup:
    task = env.with_seed(int(task_seed))
    trajs = []
    for m in range(group_size):
        tr = rollout(task, probs, seeding.stream(master, step, group, m, seeding.TAG_ENV))
        noise_rng = seeding.stream(master, step, group, m, seeding.TAG_NOISE) if noisy else None
        if noisy:
            v = agent.values[tr.states] + noise_rng.normal(0.0, agent.value_noise, len(tr))
        else:
            v = agent.values[tr.states]
        trajs.append(tr.with_values(v))
    return RolloutGroup(int(task_seed), tuple(trajs))


def validation_success(agent: TabularAgent, env: EnvConfig, n_tasks: int = 32,
                       n_rollouts: int = 16) -> float:
    """Mean success over held-out layouts with run-independent streams."""
    probs = agent.policy_table()
    wins = 0.0
    for i in range(n_tasks):
        task = env.with_seed(seeding.VALID_SEED_BASE + i)
        for r in range(n_rollouts):
            rng = seeding.stream(seeding.VALID_MASTER, 0, i, r, seeding.TAG_VALID)
            wins += rollout(task, probs, rng).terminal_return
    return wins / (n_tasks * n_rollouts)


def _advantages_for(config: TrainConfig, group: RolloutGroup, cold: bool) -> AdvantageSet:
    if cold:
        return batch_mean_advantages(group)
    if config.method is Method.PPO:
        return ppo_advantages(group)
    if config.method is Method.GRPO:
        return grpo_advantages(group)
    return evpo_advantages(group, config.ev_threshold)


def train(config: TrainConfig, init_agent: TabularAgent | None = None,
          sink: Callable[[MetricsRecord], None] | None = None,
          on_step: Callable[[int, TabularAgent], None] | None = None) -> TrainResult:
    """Run ``config.total_steps`` iterations and return records, agent and summary.

    Args:
        config: Run configuration.
        init_agent: Starting agent (copied); a fresh one from ``config`` if None.
        sink: Called with every ``MetricsRecord`` as soon as it is complete.
        on_step: Called with ``(step, agent)`` after each step's updates,
            e.g. for periodic checkpoints.

    Returns:
        The ``TrainResult`` with all records, the final agent and the summary.
    """
    agent = init_agent.copy() if init_agent is not None else make_agent(config)
    for key, val in config.agent_hyper().items():
        setattr(agent, key, val)
    noise = config.intervention if isinstance(config.intervention, NoiseInject) else None
    cold_k = config.intervention.k_cold if isinstance(config.intervention, ColdStart) else 0
    warm_k = config.warmup_steps
    if noise is not None:
        agent.value_noise = float(noise.sigma)

    records: list[MetricsRecord] = []
    for step in range(1, config.total_steps + 1):
        warm = step <= warm_k
        cold = step <= cold_k
        noisy = noise is not None and noise.sigma > 0 and step >= noise.start_step
        probs = agent.policy_table()
        old_logits = agent.logits.copy()

        groups = [collect_group(config.env, ts, probs, agent, config.seed, step, j,
                                config.group_size, noisy)
                  for j, ts in enumerate(sample_task_seeds(config, step))]
        advs = [_advantages_for(config, g, cold) for g in groups]

        per_group_ev = [a.diagnostics.ev for a in advs]
        n_critic = sum(a.mode is Mode.CRITIC for a in advs)
        var_chosen, var_rejected = [], []
        for g, a in zip(groups, advs):
            v_crit, v_mean = mode_variances(g)
            picked_critic = a.diagnostics.gate is Mode.CRITIC
            var_chosen.append(v_crit if picked_critic else v_mean)
            var_rejected.append(v_mean if picked_critic else v_crit)
        pooled_g = np.concatenate([g.pooled()[0] for g in groups])
        pooled_v = np.concatenate([g.pooled()[1] for g in groups])

        if warm:
            actor = None
        else:
            actor = ppo_update(agent, groups, advs, old_logits)
        crit = critic_update(agent, groups)

        val = None
        if step % config.eval_interval == 0 or step == config.total_steps:
            val = validation_success(agent, config.env, config.val_tasks, config.val_rollouts)

        rec = MetricsRecord(
            step=step,
            method=config.method.value,
            phase="warmup" if warm else "cold" if cold else "noise" if noisy else "train",
            per_group_ev=per_group_ev,
            batch_ev=explained_variance(pooled_g, pooled_v),
            gate_critic_fraction=n_critic / len(groups),
            train_success_rate=float(np.mean([g.returns.mean() for g in groups])),
            actor_grad_norm=0.0 if actor is None else actor.actor_grad_norm,
            critic_loss=crit.critic_loss,
            val_success_rate=val,
            threshold=config.ev_threshold,
            var_chosen=var_chosen,
            var_rejected=var_rejected,
        )
        records.append(rec)
        if sink is not None:
            sink(rec)
        if on_step is not None:
            on_step(step, agent)
    return TrainResult(config, records, agent, summarize(records, config))


def summarize(records: Sequence[MetricsRecord], config: TrainConfig | None = None) -> dict:
    """Best/final validation success, success AUC, gating fractions."""
    active = [r for r in records if r.phase != "warmup"]
    evals = [(r.step, r.val_success_rate) for r in active if r.val_success_rate is not None]
    out: dict = {"steps": len(records)}
    if evals:
        best_step, best = max(evals, key=lambda x: (x[1], -x[0]))
        out.update(best_val_success=best, best_val_step=best_step,
                   final_val_success=evals[-1][1])
    if active:
        n = len(active)
        k = max(1, n // 10)
        gates = [r.gate_critic_fraction for r in active]
        out.update(
            train_success_auc=float(np.mean([r.train_success_rate for r in active])),
            gate_first_10pct=float(np.mean(gates[:k])),
            gate_last_10pct=float(np.mean(gates[-k:])),
            median_batch_ev=float(np.median([r.batch_ev for r in active])),
            max_sandwich_margin=float(max(max(c - j for c, j in zip(r.var_chosen, r.var_rejected))
                                          for r in active)),
        )
    if config is not None:
        out.update(method=config.method.value, threshold=config.ev_threshold, seed=config.seed)
    return out


# --------------------------------------------------------------------------
# experiment drivers

def run_cold_start(config: TrainConfig, k_cold: int, **kw) -> TrainResult:
    return train(replace(config, method=Method.PPO, intervention=ColdStart(k_cold)), **kw)


def run_warmup(config: TrainConfig, k_warm: int, **kw) -> TrainResult:
    return train(replace(config, method=Method.PPO, intervention=CriticWarmup(k_warm)), **kw)


def run_noise_injection(config: TrainConfig, checkpoint, sigma: float, start_step: int = 1,
                        **kw) -> TrainResult:
    """Continue from a converged checkpoint with noisy critic reads.

    ``checkpoint`` is a path to a saved agent or a ``TabularAgent``.
    """
    if checkpoint is None:
        raise InvalidInputError("noise injection needs a converged checkpoint")
    if isinstance(checkpoint, TabularAgent):
        agent = checkpoint
    else:
        if not Path(checkpoint).exists():
            raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
        agent = TabularAgent.load(checkpoint, **config.agent_hyper())
    cfg = replace(config, intervention=NoiseInject(float(sigma), start_step))
    return train(cfg, init_agent=agent, **kw)


def sweep_threshold(config: TrainConfig, thresholds: Iterable[float],
                    seeds: Iterable[int] | None = None) -> list[dict]:
    """One EVPO run per (threshold, seed); returns one summary row per run."""
    thresholds = list(thresholds)
    if not thresholds:
        raise InvalidInputError("threshold list is empty")
    seeds = [config.seed] if seeds is None else list(seeds)
    rows = []
    for tau in thresholds:
        for s in seeds:
            res = train(replace(config, method=Method.EVPO, ev_threshold=float(tau), seed=s))
            rows.append(res.summary)
    return rows
