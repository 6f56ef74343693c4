"""What happens to PPO when the critic is bad, and two ways to fix it.

1. Noise injection: start from a trained PPO agent and add Gaussian noise to
   every critic read. Larger noise pushes EV below zero and hurts learning.
2. Cold start: use the batch-mean baseline for the first k steps while the
   critic catches up.
3. Critic warmup: train only the critic for k steps before the actor moves.

Run: ``python demos/03_interventions.py`` (about a minute)
"""

from dataclasses import replace

import numpy as np

from evpo.trainer import TrainConfig, run_cold_start, run_noise_injection, run_warmup, train


def main(seeds=(0, 1)):
    base = TrainConfig(method="PPO")

    print("Noise injection (continuing a 1000-step PPO agent for 150 steps):")
    ckpts = {s: train(replace(base, seed=s, iterations=1000, eval_interval=1000)).agent
             for s in seeds}
    for sigma in (0.0, 1.0, 10.0):
        runs = [run_noise_injection(replace(base, seed=1000 + s, iterations=150), ckpts[s], sigma)
                for s in seeds]
        print(f"  sigma {sigma:5.1f}: final success "
              f"{np.mean([r.summary['final_val_success'] for r in runs]):.3f}, median EV "
              f"{np.mean([r.summary['median_batch_ev'] for r in runs]):+.2f}")

    print("\nTraining-success AUC:")
    plain = [train(replace(base, seed=s)).summary["train_success_auc"] for s in seeds]
    cold = [run_cold_start(replace(base, seed=s), 25).summary["train_success_auc"] for s in seeds]
    warm = [run_warmup(replace(base, seed=s), 200).summary["train_success_auc"] for s in seeds]
    print(f"  PPO {np.mean(plain):.3f}   cold start (25) {np.mean(cold):.3f}   "
          f"critic warmup (200) {np.mean(warm):.3f}")


if __name__ == "__main__":
    main()
