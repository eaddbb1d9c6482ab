"""One simulated hour of dispatching, narrated.

Draws a Poisson request stream on the 5-zone grid, runs the greedy
benchmark, and walks through what happened: acceptance, profits, waiting
times, and where the money came from.
"""

import numpy as np

from amodlab import EpisodeConfig, GreedyPolicy, build_hex_grid, rollout, synth_stream

grid = build_hex_grid(5, "small")
cfg = EpisodeConfig(grid=grid, n_vehicles=4, placement_zones=(1, 2, 3))

# two-pole commute demand: zones 1 and 3 trade trips, zone 2 sees a trickle
dest_weights = np.zeros((5, 5))
dest_weights[1] = [0, 0, 1, 20, 0]
dest_weights[3] = [0, 20, 1, 0, 0]
dest_weights[2] = [0, 1, 0, 1, 0]
rates = np.array([0.0, 0.25, 0.06, 0.25, 0.0])

stream = synth_stream(grid, rates, seed=7, dest_weights=dest_weights)
print(f"stream: {len(stream)} requests over 60 steps "
      f"(max {stream.max_per_step} in one step)")

log = rollout(GreedyPolicy(), cfg, stream, seed=1)
s = log.summary
print(f"greedy: completed {s['n_completed']}, rejected {s['n_rejected']}, "
      f"profit {s['total_profit']:.2f} USD")

# why were requests rejected?
no_vehicle = sum(
    1 for d in log.decisions() if d.assigned_vehicle is None and d.best_profit is None
)
unprofitable = sum(
    1
    for d in log.decisions()
    if d.assigned_vehicle is None and d.best_profit is not None and d.best_profit <= 0
)
print(f"rejections: {no_vehicle} had no feasible vehicle, "
      f"{unprofitable} had only loss-making matches")

# waiting times of served requests
placed = {e.request_id: e.placement_step for e in stream.entries}
pickups = dict(log.drain_pickups)
for rec in log.steps:
    pickups.update(dict(rec.pickups))
waits = [step - placed[rid] for rid, step in pickups.items()]
if waits:
    print(f"pickup waits: mean {np.mean(waits):.1f} steps, max {max(waits)} "
          f"(budget {cfg.max_wait_steps})")

# profit by origin-destination pair
by_od: dict[tuple[int, int], float] = {}
for d in log.decisions():
    if d.profit is not None:
        key = (d.origin_zone, d.destination_zone)
        by_od[key] = by_od.get(key, 0.0) + d.profit
print("top earning zone pairs:")
for (o, dst), p in sorted(by_od.items(), key=lambda kv: -kv[1])[:5]:
    print(f"  {o} -> {dst}: {p:+.2f} USD")

log.save("greedy_episode.jsonl")
print("wrote greedy_episode.jsonl (line-delimited, schema amodlab-episode-log/v1)")
