"""Train LRA for a few minutes and watch it pass the greedy benchmark.

8,000 steps on the two-pole commute instance. The full campaign behind the
trend criteria uses 200,000 steps; the learning signal is visible long
before that.
"""

import time

import numpy as np

from amodlab import (
    EpisodeConfig,
    GreedyPolicy,
    Trainer,
    TrainingConfig,
    build_hex_grid,
    rollout,
    synth_stream,
)
from amodlab.training import VALIDATION_SEED_BASE

grid = build_hex_grid(5, "small")
cfg_env = EpisodeConfig(grid=grid, n_vehicles=4, placement_zones=(1, 2, 3))
dest_weights = np.zeros((5, 5))
dest_weights[1] = [0, 0, 1, 20, 0]
dest_weights[3] = [0, 20, 1, 0, 0]
dest_weights[2] = [0, 1, 0, 1, 0]
rates = np.array([0.0, 0.25, 0.06, 0.25, 0.0])

train_streams = [synth_stream(grid, rates, seed=100 + i, dest_weights=dest_weights) for i in range(20)]
val_streams = [synth_stream(grid, rates, seed=900 + i, dest_weights=dest_weights) for i in range(5)]

greedy = np.mean(
    [
        rollout(GreedyPolicy(), cfg_env, s, seed=VALIDATION_SEED_BASE + i).total_profit()
        for i, s in enumerate(val_streams)
    ]
)
print(f"greedy validation profit: {greedy:.3f} USD/episode")

cfg = TrainingConfig(
    algorithm="LRA", alpha=0.3, total_steps=8_000, warmup_steps=2_000, validate_every=2_000
)
trainer = Trainer(cfg_env, train_streams, val_streams, cfg, seed=1)

t0 = time.time()
trainer.run()
minutes = (time.time() - t0) / 60
print(f"trained {cfg.total_steps} steps in {minutes:.1f} min")

for step, score in trainer.validations:
    marker = "*" if score > greedy else " "
    print(f"  step {step:>6}: validation {score:8.3f}  ({100 * (score / greedy - 1):+5.1f}% vs greedy) {marker}")

best = trainer.best_validation
print(f"\nbest validation: {best:.3f} ({100 * (best / greedy - 1):+.1f}% vs greedy)")
