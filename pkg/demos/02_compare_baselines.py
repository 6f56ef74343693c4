"""Critic baseline vs batch-mean baseline vs the EV gate on FrozenLake.

Trains PPO (always critic), GRPO (always normalized batch mean) and EVPO (the
gate) for a few seeds and prints best validation success. It also prints how
often the gate picked the critic early and late in training. The critic
starts out noisy, so the gate mostly uses the batch mean at first and moves
to the critic as the critic learns.

Run: ``python demos/02_compare_baselines.py [n_seeds]`` (about 10 s per seed)
"""

import sys
from dataclasses import replace

import numpy as np

from evpo.trainer import TrainConfig, train


def main(n_seeds: int = 3):
    base = TrainConfig()
    for method in ("PPO", "GRPO", "EVPO"):
        results = [train(replace(base, method=method, seed=s)) for s in range(n_seeds)]
        best = np.mean([r.summary["best_val_success"] for r in results])
        line = f"{method:5s} best validation success {best:.3f}"
        if method == "EVPO":
            first = np.mean([r.summary["gate_first_10pct"] for r in results])
            last = np.mean([r.summary["gate_last_10pct"] for r in results])
            line += f"   critic-mode fraction {first:.2f} -> {last:.2f}"
        print(line)


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 3)
