"""Hexagonal zone geometry: stored layouts, adjacency, shortest travel times.

Zones live on an axial hex lattice. A layout is a finite set of axial
coordinates; travel times and distances between zones come from
breadth-first search over the adjacency graph, with every hop costing a
fixed number of time steps and a fixed center-to-center distance.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

SMALL_NEIGHBOR_M = 459.0
LARGE_NEIGHBOR_M = 917.0
SMALL_HOP_STEPS = 2
LARGE_HOP_STEPS = 5

# Axial displacement of the six hex neighbors.
_HEX_DIRECTIONS = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1))


def _row(q_start: int, width: int, r: int) -> list[tuple[int, int]]:
    return [(q, r) for q in range(q_start, q_start + width)]


# Stored layouts. The 11-zone patch is a compact three-row cluster; the
# 5-zone layout is its southern row; the 38-zone layout is an elongated
# ten-row strip.
_LAYOUTS: dict[int, list[tuple[int, int]]] = {
    5: _row(0, 5, 0),
    11: _row(0, 5, 0) + _row(0, 4, 1) + _row(0, 2, 2),
    38: (
        _row(0, 2, 0)
        + _row(-1, 3, 1)
        + _row(-1, 4, 2)
        + _row(-2, 5, 3)
        + _row(-2, 5, 4)
        + _row(-3, 5, 5)
        + _row(-3, 5, 6)
        + _row(-3, 4, 7)
        + _row(-4, 3, 8)
        + _row(-4, 2, 9)
    ),
}


class LayoutError(ValueError):
    """Requested layout id or scale does not exist."""


@dataclass
class ZoneGrid:
    """A zone set with precomputed pairwise shortest travel times/distances."""

    zones: list[int]
    axial: np.ndarray  # (n, 2) integer axial coordinates
    neighbor_distance_m: float
    steps_between_neighbors: int
    pairwise_travel_steps: np.ndarray  # (n, n) int
    pairwise_distance_m: np.ndarray  # (n, n) float
    neighbors: list[list[int]] = field(repr=False)
    centers_m: np.ndarray = field(repr=False)  # (n, 2) planar zone centers

    @property
    def n_zones(self) -> int:
        return len(self.zones)

    def distance_km(self, a: int, b: int) -> float:
        return self.pairwise_distance_m[a, b] / 1000.0

    def travel_steps(self, a: int, b: int) -> int:
        return int(self.pairwise_travel_steps[a, b])

    @property
    def diameter_km(self) -> float:
        return float(self.pairwise_distance_m.max()) / 1000.0

    def to_dict(self) -> dict:
        return {
            "axial": self.axial.tolist(),
            "neighbor_distance_m": self.neighbor_distance_m,
            "steps_between_neighbors": self.steps_between_neighbors,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ZoneGrid":
        return grid_from_axial(
            [tuple(c) for c in d["axial"]],
            d["neighbor_distance_m"],
            d["steps_between_neighbors"],
        )


def grid_from_axial(
    coords: list[tuple[int, int]],
    neighbor_distance_m: float,
    steps_between_neighbors: int,
) -> ZoneGrid:
    """Build a ZoneGrid from explicit axial coordinates.

    Zone ids are assigned by sorted (r, q) order. The patch must be
    connected; disconnected zone pairs have no travel time.
    """
    coords = sorted(set(coords), key=lambda c: (c[1], c[0]))
    n = len(coords)
    index = {c: i for i, c in enumerate(coords)}
    neighbors: list[list[int]] = []
    for q, r in coords:
        nb = [index[(q + dq, r + dr)] for dq, dr in _HEX_DIRECTIONS if (q + dq, r + dr) in index]
        neighbors.append(sorted(nb))

    hops = np.full((n, n), -1, dtype=np.int64)
    for src in range(n):
        hops[src, src] = 0
        queue = deque([src])
        while queue:
            u = queue.popleft()
            for v in neighbors[u]:
                if hops[src, v] < 0:
                    hops[src, v] = hops[src, u] + 1
                    queue.append(v)
    if (hops < 0).any():
        raise LayoutError("zone layout is not connected")

    axial = np.array(coords, dtype=np.int64)
    d = float(neighbor_distance_m)
    centers = np.column_stack(
        [
            d * (axial[:, 0] + axial[:, 1] / 2.0),
            d * (np.sqrt(3.0) / 2.0) * axial[:, 1],
        ]
    )
    return ZoneGrid(
        zones=list(range(n)),
        axial=axial,
        neighbor_distance_m=d,
        steps_between_neighbors=int(steps_between_neighbors),
        pairwise_travel_steps=hops * int(steps_between_neighbors),
        pairwise_distance_m=hops * d,
        neighbors=neighbors,
        centers_m=centers,
    )


def build_hex_grid(n_zones: int, zone_scale: str) -> ZoneGrid:
    """Return a stored layout at the requested scale.

    `n_zones` must be one of 5, 11, 38. Small scale puts neighboring zone
    centers 459 m / 2 time steps apart, large scale 917 m / 5 time steps.
    """
    if n_zones not in _LAYOUTS:
        raise LayoutError(f"unknown layout: {n_zones} zones (stored: {sorted(_LAYOUTS)})")
    if zone_scale == "small":
        dist, steps = SMALL_NEIGHBOR_M, SMALL_HOP_STEPS
    elif zone_scale == "large":
        dist, steps = LARGE_NEIGHBOR_M, LARGE_HOP_STEPS
    else:
        raise LayoutError(f"unknown zone scale: {zone_scale!r} (use 'small' or 'large')")
    return grid_from_axial(_LAYOUTS[n_zones], dist, steps)
