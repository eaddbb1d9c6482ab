"""Two-stage decision layer: per-agent scoring and global bipartite matching.

Stage one turns per-agent acceptance probabilities into actions and scores;
stage two selects the score-maximizing assignment of vehicles to requests
under the constraints that each request is assigned at most once and each
vehicle takes at most one new request. A greedy benchmark policy and a
uniform random policy are provided alongside.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .hexgrid import ZoneGrid
from .sim import (
    DecisionAnnotation,
    EpisodeConfig,
    SimState,
    decision_annotations,
    feasible,
    itinerary_completion,
    profit,
)

ACTION_ACCEPT = 0
ACTION_REJECT = 1
N_ACTIONS = 2


@dataclass(frozen=True)
class Agent:
    """One feasible (vehicle, request) pair at the current step."""

    vehicle_id: int
    request_id: int


@dataclass
class AgentSet:
    agents: list[Agent]

    def __len__(self) -> int:
        return len(self.agents)

    def __iter__(self):
        return iter(self.agents)


@dataclass(frozen=True)
class GlobalAction:
    """Selected (vehicle_id, request_id) assignments; the rest is rejected."""

    assignments: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.assignments)


def enumerate_agents(state: SimState, grid: ZoneGrid) -> AgentSet:
    """All feasible pairs, in (request id, vehicle id) order."""
    agents = [
        Agent(vehicle.id, request.id)
        for request in sorted(state.open_requests, key=lambda r: r.id)
        for vehicle in state.vehicles
        if feasible(vehicle, request, state, grid)
    ]
    return AgentSet(agents)


def score_agents(
    probs: np.ndarray, mode: str, rng: np.random.Generator | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Choose per-agent actions and matching scores from probability pairs.

    Training mode samples the action; test mode takes the argmax. The score
    is the acceptance probability for an accepting agent and 0 otherwise.
    """
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 2 or probs.shape[1] != N_ACTIONS:
        raise ValueError("probs must have shape (n_agents, 2)")
    if mode == "train":
        if rng is None:
            raise ValueError("train mode needs an rng")
        u = rng.random(len(probs))
        actions = np.where(u < probs[:, ACTION_ACCEPT], ACTION_ACCEPT, ACTION_REJECT)
    elif mode == "test":
        actions = np.argmax(probs, axis=1)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    scores = np.where(actions == ACTION_ACCEPT, probs[:, ACTION_ACCEPT], 0.0)
    return actions.astype(np.int64), scores


# -- maximum-weight bipartite matching ----------------------------------------
#
# Augmenting-path (Hungarian) assignment over bi-criteria weights: the
# primary component is the submitted score, the secondary a tie-break
# bonus ladder that prefers lexicographically low (request id, vehicle id)
# pairs. Lexicographic order on (primary, secondary) is an ordered group,
# so the standard potential argument applies unchanged and the primary
# total is exactly optimal.

_INF2 = (float("inf"), float("inf"))


def _sub2(a, b):
    return (a[0] - b[0], a[1] - b[1])


def _add2(a, b):
    return (a[0] + b[0], a[1] + b[1])


def _min_cost_assignment(cost: list[list[tuple[float, float]]], n: int, m: int) -> list[int]:
    """Jonker-style Hungarian on an n x m (n <= m) tuple-cost matrix."""
    u = [(0.0, 0.0)] * (n + 1)
    v = [(0.0, 0.0)] * (m + 1)
    match_row = [0] * (m + 1)  # column j -> matched row (1-based, 0 = free)
    way = [0] * (m + 1)
    for i in range(1, n + 1):
        match_row[0] = i
        j0 = 0
        minv = [_INF2] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = match_row[j0]
            delta = _INF2
            j1 = 0
            row = cost[i0 - 1]
            ui0 = u[i0]
            for j in range(1, m + 1):
                if used[j]:
                    continue
                cur = _sub2(_sub2(row[j - 1], ui0), v[j])
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[match_row[j]] = _add2(u[match_row[j]], delta)
                    v[j] = _sub2(v[j], delta)
                else:
                    minv[j] = _sub2(minv[j], delta)
            j0 = j1
            if match_row[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match_row[j0] = match_row[j1]
            j0 = j1
    result = [-1] * n
    for j in range(1, m + 1):
        if match_row[j]:
            result[match_row[j] - 1] = j - 1
    return result


def solve_matching(agents: AgentSet, scores: np.ndarray) -> GlobalAction:
    """Maximum-total-score assignment of requests to vehicles.

    Agents with score 0 cannot be assigned. Among score-optimal
    assignments, ties are broken toward the lowest (request id, vehicle id)
    pairs. The returned assignments are sorted by request id.
    """
    scores = np.asarray(scores, dtype=float)
    if len(scores) != len(agents.agents):
        raise ValueError("one score per agent required")
    if (scores < 0).any():
        raise ValueError("scores must be nonnegative")

    weight: dict[tuple[int, int], float] = {}
    for agent, s in zip(agents.agents, scores):
        if s > 0.0:
            weight[(agent.request_id, agent.vehicle_id)] = float(s)
    if not weight:
        return GlobalAction(())

    request_ids = sorted({r for r, _ in weight})
    vehicle_ids = sorted({v for _, v in weight})
    n, m = len(request_ids), len(vehicle_ids)

    # Columns: real vehicles then one dummy (unassigned) slot per request.
    cost: list[list[tuple[float, float]]] = []
    for i, rid in enumerate(request_ids):
        row = []
        for j, vid in enumerate(vehicle_ids):
            s = weight.get((rid, vid))
            if s is None:
                row.append((0.0, 0.0))
            else:
                rank = i * m + j
                row.append((-s, -(2.0 ** (-rank))))
        row.extend([(0.0, 0.0)] * n)
        cost.append(row)

    cols = _min_cost_assignment(cost, n, m + n)
    chosen = []
    for i, j in enumerate(cols):
        if 0 <= j < m:
            rid, vid = request_ids[i], vehicle_ids[j]
            if (rid, vid) in weight:
                chosen.append((vid, rid))
    chosen.sort(key=lambda a: a[1])
    return GlobalAction(tuple(chosen))


def total_score(action: GlobalAction, agents: AgentSet, scores: np.ndarray) -> float:
    """Sum of the assigned agents' scores, in request-id order."""
    lookup = {
        (a.vehicle_id, a.request_id): float(s) for a, s in zip(agents.agents, scores)
    }
    return sum(lookup[pair] for pair in sorted(action.assignments, key=lambda a: a[1]))


# -- policies -----------------------------------------------------------------


class DispatchPolicy(Protocol):
    def decide(
        self, state: SimState, cfg: EpisodeConfig, rng: np.random.Generator, mode: str
    ) -> tuple[GlobalAction, dict[int, DecisionAnnotation]]: ...


def greedy_dispatch(
    state: SimState, grid: ZoneGrid, cfg: EpisodeConfig
) -> tuple[GlobalAction, dict[int, DecisionAnnotation]]:
    """Arrival-order benchmark: best positive-profit feasible vehicle, else reject.

    Vehicles already assigned within this batch are unavailable to later
    requests; the per-request annotation reflects that sequential view.
    """
    taken: set[int] = set()
    assignments: list[tuple[int, int]] = []
    annotations: dict[int, DecisionAnnotation] = {}
    for request in sorted(state.open_requests, key=lambda r: (r.placement_step, r.id)):
        best_profit: float | None = None
        best_vehicle: int | None = None
        for vehicle in state.vehicles:
            if vehicle.id in taken or not feasible(vehicle, request, state, grid):
                continue
            p = profit(vehicle, request, grid, cfg)
            if best_profit is None or p > best_profit:
                best_profit, best_vehicle = p, vehicle.id
        best_zone = (
            itinerary_completion(state.vehicles[best_vehicle], grid)[1]
            if best_vehicle is not None
            else None
        )
        annotations[request.id] = DecisionAnnotation(best_profit, best_zone)
        if best_profit is not None and best_profit > 0:
            assignments.append((best_vehicle, request.id))
            taken.add(best_vehicle)
    assignments.sort(key=lambda a: a[1])
    return GlobalAction(tuple(assignments)), annotations


class GreedyPolicy:
    """Deterministic arrival-order benchmark from the experimental setup."""

    def decide(self, state, cfg, rng, mode):
        return greedy_dispatch(state, cfg.grid, cfg)


class RandomPolicy:
    """Accept each feasible pair with fixed probability; matching on flat scores."""

    def __init__(self, p_accept: float = 0.5):
        self.p_accept = p_accept

    def decide(self, state, cfg, rng, mode):
        agents = enumerate_agents(state, cfg.grid)
        probs = np.full((len(agents), 2), 0.0)
        probs[:, ACTION_ACCEPT] = self.p_accept
        probs[:, ACTION_REJECT] = 1.0 - self.p_accept
        _, scores = score_agents(probs, "train", rng)
        action = solve_matching(agents, scores)
        return action, decision_annotations(state, cfg.grid, cfg)
