"""Tour of the stored zone layouts and their travel geometry.

Builds the three grids, prints adjacency and travel-time facts, and drops a
scatter of the 38-zone layout to zone_layout.png.
"""

import numpy as np

from amodlab import build_hex_grid

for n_zones, scale in ((5, "small"), (11, "small"), (38, "large")):
    grid = build_hex_grid(n_zones, scale)
    t = grid.pairwise_travel_steps
    print(f"{n_zones:>2} zones ({scale}): "
          f"hop = {grid.steps_between_neighbors} steps / {grid.neighbor_distance_m:.0f} m, "
          f"diameter = {t.max()} steps / {grid.diameter_km:.2f} km")
    degree = [len(nb) for nb in grid.neighbors]
    print(f"    neighbor counts: min {min(degree)}, max {max(degree)}, "
          f"interior zones (6 neighbors): {sum(1 for d in degree if d == 6)}")

grid = build_hex_grid(5, "small")
print("\n5-zone travel steps between all pairs:")
print(grid.pairwise_travel_steps)

# a feasibility fact that shapes every instance: how far can a pickup be?
wait = 5
reachable = (grid.pairwise_travel_steps <= wait - 1).mean()
print(f"\nwith a {wait}-step wait budget, {100 * reachable:.0f}% of zone pairs "
      "are reachable in time for a pickup")

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    g38 = build_hex_grid(38, "large")
    fig, ax = plt.subplots(figsize=(4, 7))
    xy = g38.centers_m / 1000.0
    ax.scatter(xy[:, 0], xy[:, 1], s=160, c=np.arange(38), cmap="viridis")
    for z, (x, y) in enumerate(xy):
        ax.annotate(str(z), (x, y), ha="center", va="center", fontsize=6, color="white")
    ax.set_xlabel("km east")
    ax.set_ylabel("km north")
    ax.set_title("38-zone large layout")
    ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig("zone_layout.png", dpi=150)
    print("wrote zone_layout.png")
except ImportError:
    pass
