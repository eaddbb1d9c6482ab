"""Observation featurization for (vehicle, request) agents.

Every agent sees its own-pair features plus two variable-size sets: the
other open requests and the whole fleet. The learned attention pooling
lives in the networks; this module produces the raw, fixed-width
per-entity features, deterministically from simulator state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dispatch import Agent
from .hexgrid import ZoneGrid
from .sim import EpisodeConfig, SimState, itinerary_completion, profit

OWN_DIM = 5
REQ_DIM = 5
VEH_DIM = 5
ACT_DIM = OWN_DIM + 2  # own-pair features of the other agent + one-hot action


@dataclass
class Observation:
    """Raw per-agent observation: own pair plus entity sets."""

    own: np.ndarray  # (OWN_DIM,)
    other_requests: np.ndarray  # (n_other_requests, REQ_DIM)
    vehicles: np.ndarray  # (n_vehicles, VEH_DIM)


def _scales(grid: ZoneGrid, cfg: EpisodeConfig) -> tuple[float, float, float]:
    diameter = max(grid.diameter_km, 1e-9)
    wait = float(cfg.max_wait_steps)
    money = cfg.revenue_per_km * diameter
    return diameter, wait, money


def own_pair_features(
    state: SimState, agent: Agent, grid: ZoneGrid, cfg: EpisodeConfig
) -> np.ndarray:
    """[approach steps, trip km, prospective profit, wait slack, load], scaled."""
    diameter, wait, money = _scales(grid, cfg)
    vehicle = state.vehicles[agent.vehicle_id]
    request = state.request(agent.request_id)
    busy, end_zone = itinerary_completion(vehicle, grid)
    approach = busy + grid.travel_steps(end_zone, request.origin_zone)
    trip_km = grid.distance_km(request.origin_zone, request.destination_zone)
    pair_profit = profit(vehicle, request, grid, cfg)
    deadline = request.placement_step + request.max_wait_steps
    slack = deadline - (state.step + approach)
    return np.array(
        [
            approach / wait,
            trip_km / diameter,
            pair_profit / money,
            slack / wait,
            float(len(vehicle.itinerary)),
        ]
    )


def encode_observation(
    state: SimState, agent: Agent, grid: ZoneGrid, cfg: EpisodeConfig
) -> Observation:
    """Full observation of one agent; set parts in ascending-id order."""
    diameter, wait, money = _scales(grid, cfg)
    vehicle = state.vehicles[agent.vehicle_id]
    request = state.request(agent.request_id)
    _, end_zone = itinerary_completion(vehicle, grid)

    reqs = []
    for other in sorted(state.open_requests, key=lambda r: r.id):
        if other.id == agent.request_id:
            continue
        trip_km = grid.distance_km(other.origin_zone, other.destination_zone)
        reqs.append(
            [
                grid.travel_steps(end_zone, other.origin_zone) / wait,
                trip_km / diameter,
                profit(vehicle, other, grid, cfg) / money,
                float(other.origin_zone == request.origin_zone),
                float(other.destination_zone == request.destination_zone),
            ]
        )

    vehs = []
    for other in state.vehicles:
        busy_o, end_o = itinerary_completion(other, grid)
        vehs.append(
            [
                grid.distance_km(other.zone, request.origin_zone) / diameter,
                grid.travel_steps(end_o, request.origin_zone) / wait,
                busy_o / wait,
                float(len(other.itinerary)),
                float(other.id == agent.vehicle_id),
            ]
        )

    return Observation(
        own=own_pair_features(state, agent, grid, cfg),
        other_requests=np.array(reqs, dtype=float).reshape(len(reqs), REQ_DIM),
        vehicles=np.array(vehs, dtype=float).reshape(len(vehs), VEH_DIM),
    )


@dataclass
class ObsBatch:
    """Padded, masked stack of observations for batched network passes."""

    own: np.ndarray  # (N, OWN_DIM)
    requests: np.ndarray  # (N, M, REQ_DIM)
    request_mask: np.ndarray  # (N, M) bool
    vehicles: np.ndarray  # (N, K, VEH_DIM)
    vehicle_mask: np.ndarray  # (N, K) bool

    def __len__(self) -> int:
        return len(self.own)


def stack_observations(observations: list[Observation]) -> ObsBatch:
    n = len(observations)
    m = max((o.other_requests.shape[0] for o in observations), default=0)
    k = max((o.vehicles.shape[0] for o in observations), default=0)
    own = np.zeros((n, OWN_DIM))
    reqs = np.zeros((n, max(m, 1), REQ_DIM))
    req_mask = np.zeros((n, max(m, 1)), dtype=bool)
    vehs = np.zeros((n, max(k, 1), VEH_DIM))
    veh_mask = np.zeros((n, max(k, 1)), dtype=bool)
    for i, o in enumerate(observations):
        own[i] = o.own
        mi = o.other_requests.shape[0]
        ki = o.vehicles.shape[0]
        if mi:
            reqs[i, :mi] = o.other_requests
            req_mask[i, :mi] = True
        if ki:
            vehs[i, :ki] = o.vehicles
            veh_mask[i, :ki] = True
    return ObsBatch(own, reqs, req_mask, vehs, veh_mask)


@dataclass
class ActionSetBatch:
    """Per-agent action-annotated summaries of the other agents.

    Entry (i, j) describes the j-th other agent at agent i's step: its
    own-pair features concatenated with a one-hot of its post-matching
    action (accept = served by the matching, reject otherwise).
    """

    acts: np.ndarray  # (N, A, ACT_DIM)
    act_mask: np.ndarray  # (N, A) bool

    def __len__(self) -> int:
        return len(self.acts)


def build_action_sets(
    annotations: list[np.ndarray], selected: np.ndarray, groups: list[list[int]]
) -> ActionSetBatch:
    """Assemble ``a_bar_{-i}`` sets from same-step agent groups.

    `annotations[g]` is the own-pair feature vector of global agent g,
    `selected[g]` its post-matching accept flag, and `groups` lists the
    global agent indices belonging to each step; every agent's set holds
    the other agents of its own group.
    """
    n = sum(len(g) for g in groups)
    a = max((len(g) - 1 for g in groups), default=0)
    acts = np.zeros((n, max(a, 1), ACT_DIM))
    mask = np.zeros((n, max(a, 1)), dtype=bool)
    for group in groups:
        for i in group:
            col = 0
            for j in group:
                if j == i:
                    continue
                acts[i, col, :OWN_DIM] = annotations[j]
                acts[i, col, OWN_DIM + (0 if selected[j] else 1)] = 1.0
                mask[i, col] = True
                col += 1
    return ActionSetBatch(acts, mask)
