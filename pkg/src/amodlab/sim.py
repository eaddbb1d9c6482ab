"""Discrete-time AMoD simulator: request lifecycle, vehicle motion, profits.

One simulated step is one minute. At the start of step t the operator
decides the batch of requests placed during step t-1; vehicles then advance
one step along shortest zone paths, picking up and dropping off on arrival.
Profit for an accepted request is credited at the decision step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import TYPE_CHECKING, Iterator

import numpy as np

from .hexgrid import ZoneGrid
from .streams import RequestStream

if TYPE_CHECKING:  # structural use only; no runtime dependency
    from .dispatch import DispatchPolicy, GlobalAction

EPISODE_LOG_SCHEMA = "amodlab-episode-log/v1"

PENDING = "pending"
ASSIGNED = "assigned"
IN_VEHICLE = "in_vehicle"
COMPLETED = "completed"
REJECTED = "rejected"


class DispatchError(ValueError):
    """A submitted global action violates the matching constraints."""


@dataclass
class EpisodeConfig:
    grid: ZoneGrid
    n_vehicles: int
    revenue_per_km: float = 5.00
    cost_per_km: float = 4.50
    max_wait_steps: int = 5
    episode_length: int = 60
    placement_zones: tuple[int, ...] | None = None  # None: uniform over all zones

    def __post_init__(self):
        if not (self.revenue_per_km > self.cost_per_km > 0):
            raise ValueError("need revenue_per_km > cost_per_km > 0")
        if self.placement_zones is not None:
            self.placement_zones = tuple(int(z) for z in self.placement_zones)
            if not self.placement_zones:
                raise ValueError("placement_zones must not be empty")

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "n_vehicles": self.n_vehicles,
            "revenue_per_km": self.revenue_per_km,
            "cost_per_km": self.cost_per_km,
            "max_wait_steps": self.max_wait_steps,
            "episode_length": self.episode_length,
            "placement_zones": (
                list(self.placement_zones) if self.placement_zones is not None else None
            ),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeConfig":
        placement = d.get("placement_zones")
        return cls(
            grid=ZoneGrid.from_dict(d["grid"]),
            n_vehicles=d["n_vehicles"],
            revenue_per_km=d["revenue_per_km"],
            cost_per_km=d["cost_per_km"],
            max_wait_steps=d["max_wait_steps"],
            episode_length=d["episode_length"],
            placement_zones=tuple(placement) if placement else None,
        )


@dataclass
class Request:
    id: int
    origin_zone: int
    destination_zone: int
    placement_step: int
    status: str = PENDING
    max_wait_steps: int = 5


@dataclass
class Job:
    pickup_zone: int
    dropoff_zone: int
    request_id: int
    picked_up: bool = False


@dataclass
class Vehicle:
    id: int
    zone: int
    next_zone: int | None = None
    remaining: int = 0  # steps left in the current hop; 0 at a zone center
    itinerary: list[Job] = field(default_factory=list)

    @property
    def idle(self) -> bool:
        return not self.itinerary and self.next_zone is None


@dataclass
class SimState:
    step: int
    vehicles: list[Vehicle]
    open_requests: list[Request]
    episode_length: int = 60

    def vehicle(self, vehicle_id: int) -> Vehicle:
        return self.vehicles[vehicle_id]

    def request(self, request_id: int) -> Request:
        for r in self.open_requests:
            if r.id == request_id:
                return r
        raise KeyError(f"request {request_id} is not open")


def initial_state(cfg: EpisodeConfig, rng: np.random.Generator) -> SimState:
    """Fleet placed uniformly at random over the admissible zones."""
    if cfg.placement_zones is None:
        zones = rng.integers(0, cfg.grid.n_zones, size=cfg.n_vehicles)
    else:
        pool = np.array(cfg.placement_zones)
        zones = pool[rng.integers(0, len(pool), size=cfg.n_vehicles)]
    vehicles = [Vehicle(id=i, zone=int(z)) for i, z in enumerate(zones)]
    return SimState(
        step=0, vehicles=vehicles, open_requests=[], episode_length=cfg.episode_length
    )


# -- kinematics -------------------------------------------------------------


def itinerary_completion(vehicle: Vehicle, grid: ZoneGrid) -> tuple[int, int]:
    """(steps until all current jobs are done, zone where the vehicle ends)."""
    steps = 0
    if vehicle.next_zone is not None:
        steps = vehicle.remaining
        pos = vehicle.next_zone
    else:
        pos = vehicle.zone
    for job in vehicle.itinerary:
        if not job.picked_up:
            steps += grid.travel_steps(pos, job.pickup_zone)
            pos = job.pickup_zone
        steps += grid.travel_steps(pos, job.dropoff_zone)
        pos = job.dropoff_zone
    return steps, pos


def feasible(vehicle: Vehicle, request: Request, state: SimState, grid: ZoneGrid) -> bool:
    """Can the vehicle pick the request up within its waiting budget?

    False when the itinerary is already full (two jobs) or when finishing
    the current jobs plus the approach would miss the pickup deadline.
    """
    if len(vehicle.itinerary) >= 2:
        return False
    busy, end_zone = itinerary_completion(vehicle, grid)
    approach = grid.travel_steps(end_zone, request.origin_zone)
    pickup_step = state.step + busy + approach
    return pickup_step <= request.placement_step + request.max_wait_steps


def profit(vehicle: Vehicle, request: Request, grid: ZoneGrid, cfg: EpisodeConfig) -> float:
    """Revenue of the trip minus cost of approach plus trip; may be negative."""
    _, end_zone = itinerary_completion(vehicle, grid)
    trip_km = grid.distance_km(request.origin_zone, request.destination_zone)
    approach_km = grid.distance_km(end_zone, request.origin_zone)
    return cfg.revenue_per_km * trip_km - cfg.cost_per_km * (approach_km + trip_km)


def _next_hop(grid: ZoneGrid, zone: int, target: int) -> int:
    want = grid.pairwise_travel_steps[zone, target] - grid.steps_between_neighbors
    for nb in grid.neighbors[zone]:
        if grid.pairwise_travel_steps[nb, target] == want:
            return nb
    raise RuntimeError(f"no shortest-path hop from zone {zone} to {target}")


def _fire_arrival_events(
    vehicle: Vehicle,
    registry: dict[int, Request],
    step: int,
    pickups: list[tuple[int, int]],
    dropoffs: list[tuple[int, int]],
) -> None:
    """Resolve every zero-distance pickup/dropoff at the vehicle's zone."""
    while vehicle.itinerary:
        job = vehicle.itinerary[0]
        target = job.dropoff_zone if job.picked_up else job.pickup_zone
        if vehicle.zone != target:
            break
        if job.picked_up:
            vehicle.itinerary.pop(0)
            registry[job.request_id].status = COMPLETED
            dropoffs.append((job.request_id, step))
        else:
            job.picked_up = True
            registry[job.request_id].status = IN_VEHICLE
            pickups.append((job.request_id, step))


def _advance_vehicle(
    vehicle: Vehicle,
    grid: ZoneGrid,
    registry: dict[int, Request],
    arrival_step: int,
    pickups: list[tuple[int, int]],
    dropoffs: list[tuple[int, int]],
) -> None:
    if vehicle.idle:
        return
    if vehicle.next_zone is None:
        job = vehicle.itinerary[0]
        target = job.dropoff_zone if job.picked_up else job.pickup_zone
        vehicle.next_zone = _next_hop(grid, vehicle.zone, target)
        vehicle.remaining = grid.steps_between_neighbors
    vehicle.remaining -= 1
    if vehicle.remaining == 0:
        vehicle.zone = vehicle.next_zone
        vehicle.next_zone = None
        _fire_arrival_events(vehicle, registry, arrival_step, pickups, dropoffs)


# -- one dispatch step --------------------------------------------------------


@dataclass
class StepResult:
    state: SimState
    per_agent_profits: dict[tuple[int, int], float]
    global_profit: float
    pickups: list[tuple[int, int]]
    dropoffs: list[tuple[int, int]]
    rejected: list[int]


def _validate_action(action, state: SimState, grid: ZoneGrid) -> None:
    seen_vehicles: set[int] = set()
    seen_requests: set[int] = set()
    open_by_id = {r.id: r for r in state.open_requests}
    for vehicle_id, request_id in action.assignments:
        if not 0 <= vehicle_id < len(state.vehicles):
            raise DispatchError(f"unknown vehicle id {vehicle_id}")
        if request_id not in open_by_id:
            raise DispatchError(f"request {request_id} is not in the open batch")
        if vehicle_id in seen_vehicles:
            raise DispatchError(f"vehicle {vehicle_id} assigned more than once")
        if request_id in seen_requests:
            raise DispatchError(f"request {request_id} assigned more than once")
        seen_vehicles.add(vehicle_id)
        seen_requests.add(request_id)
        vehicle = state.vehicles[vehicle_id]
        if not feasible(vehicle, open_by_id[request_id], state, grid):
            raise DispatchError(
                f"pair (vehicle {vehicle_id}, request {request_id}) is infeasible"
            )


def apply_dispatch(
    state: SimState,
    action: "GlobalAction",
    stream: RequestStream,
    cfg: EpisodeConfig,
    registry: dict[int, Request] | None = None,
) -> StepResult:
    """Apply a validated global action and advance the world one step.

    Mutates `state` in place and returns it inside a StepResult together
    with the profits credited this step and the pickup/dropoff events.
    `registry` (request id -> Request) keeps terminal statuses visible to
    the caller; pass the same dict across steps of an episode.
    """
    grid = cfg.grid
    if registry is None:
        registry = {}
    for r in state.open_requests:
        registry.setdefault(r.id, r)
    _validate_action(action, state, grid)

    per_agent: dict[tuple[int, int], float] = {}
    pickups: list[tuple[int, int]] = []
    dropoffs: list[tuple[int, int]] = []
    open_by_id = {r.id: r for r in state.open_requests}

    for vehicle_id, request_id in sorted(action.assignments, key=lambda a: a[1]):
        vehicle = state.vehicles[vehicle_id]
        request = open_by_id[request_id]
        per_agent[(vehicle_id, request_id)] = profit(vehicle, request, grid, cfg)
        vehicle.itinerary.append(
            Job(request.origin_zone, request.destination_zone, request.id)
        )
        request.status = ASSIGNED
        if vehicle.next_zone is None:
            _fire_arrival_events(vehicle, registry, state.step, pickups, dropoffs)

    rejected = []
    for request in state.open_requests:
        if request.status == PENDING:
            request.status = REJECTED
            rejected.append(request.id)

    arrival_step = state.step + 1
    for vehicle in state.vehicles:
        _advance_vehicle(vehicle, grid, registry, arrival_step, pickups, dropoffs)

    new_batch = [
        Request(
            id=e.request_id,
            origin_zone=e.origin_zone,
            destination_zone=e.destination_zone,
            placement_step=e.placement_step,
            max_wait_steps=cfg.max_wait_steps,
        )
        for e in stream.placed_at(state.step)
    ]
    state.open_requests = new_batch
    state.step = arrival_step
    return StepResult(
        state=state,
        per_agent_profits=per_agent,
        global_profit=float(sum(per_agent.values())),
        pickups=pickups,
        dropoffs=dropoffs,
        rejected=rejected,
    )


# -- episode logs -------------------------------------------------------------


@dataclass
class DecisionRecord:
    request_id: int
    origin_zone: int
    destination_zone: int
    placement_step: int
    assigned_vehicle: int | None
    profit: float | None
    best_profit: float | None
    best_vehicle_zone: int | None
    dest_vehicles: int


@dataclass
class StepRecord:
    step: int
    decisions: list[DecisionRecord]
    global_profit: float
    pickups: list[tuple[int, int]]
    dropoffs: list[tuple[int, int]]
    vehicle_zones: list[int]


@dataclass
class EpisodeLog:
    config: EpisodeConfig
    stream_metadata: dict
    seed: int | None
    steps: list[StepRecord] = field(default_factory=list)
    drain_pickups: list[tuple[int, int]] = field(default_factory=list)
    drain_dropoffs: list[tuple[int, int]] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def total_profit(self) -> float:
        return float(sum(rec.global_profit for rec in self.steps))

    def decisions(self) -> Iterator[DecisionRecord]:
        for rec in self.steps:
            yield from rec.decisions

    def save(self, path) -> None:
        path = Path(path)
        with path.open("w") as fh:
            header = {
                "schema": EPISODE_LOG_SCHEMA,
                "config": self.config.to_dict(),
                "stream_metadata": self.stream_metadata,
                "seed": self.seed,
            }
            fh.write(json.dumps(header) + "\n")
            for rec in self.steps:
                fh.write(json.dumps({"step_record": asdict(rec)}) + "\n")
            tail = {
                "drain_pickups": self.drain_pickups,
                "drain_dropoffs": self.drain_dropoffs,
                "summary": self.summary,
            }
            fh.write(json.dumps(tail) + "\n")

    @classmethod
    def load(cls, path) -> "EpisodeLog":
        path = Path(path)
        with path.open() as fh:
            header = json.loads(fh.readline())
            if header.get("schema") != EPISODE_LOG_SCHEMA:
                raise ValueError(f"{path}: unsupported log schema")
            log = cls(
                config=EpisodeConfig.from_dict(header["config"]),
                stream_metadata=header["stream_metadata"],
                seed=header["seed"],
            )
            for line in fh:
                record = json.loads(line)
                if "step_record" in record:
                    raw = record["step_record"]
                    raw["decisions"] = [DecisionRecord(**d) for d in raw["decisions"]]
                    raw["pickups"] = [tuple(p) for p in raw["pickups"]]
                    raw["dropoffs"] = [tuple(p) for p in raw["dropoffs"]]
                    log.steps.append(StepRecord(**raw))
                else:
                    log.drain_pickups = [tuple(p) for p in record["drain_pickups"]]
                    log.drain_dropoffs = [tuple(p) for p in record["drain_dropoffs"]]
                    log.summary = record["summary"]
        return log


@dataclass(frozen=True)
class DecisionAnnotation:
    """Policy-side context for one open request, stored for analysis."""

    best_profit: float | None
    best_vehicle_zone: int | None


def decision_annotations(
    state: SimState, grid: ZoneGrid, cfg: EpisodeConfig
) -> dict[int, DecisionAnnotation]:
    """Best feasible profit (and serving position) per open request.

    Computed against the step-start state; this is the right notion for
    policies that decide the whole batch simultaneously.
    """
    out: dict[int, DecisionAnnotation] = {}
    for request in state.open_requests:
        best: float | None = None
        best_zone: int | None = None
        for vehicle in state.vehicles:
            if not feasible(vehicle, request, state, grid):
                continue
            p = profit(vehicle, request, grid, cfg)
            if best is None or p > best:
                best = p
                best_zone = itinerary_completion(vehicle, grid)[1]
        out[request.id] = DecisionAnnotation(best_profit=best, best_vehicle_zone=best_zone)
    return out


_MAX_DRAIN_STEPS = 10_000


def rollout(
    policy: "DispatchPolicy",
    cfg: EpisodeConfig,
    stream: RequestStream,
    seed: int,
    mode: str = "test",
) -> EpisodeLog:
    """Run one episode and log every state, decision, and request outcome.

    Deterministic given (policy parameters, stream, seed). After the final
    decision step the world keeps moving without new requests until all
    vehicles are idle, so every assigned request reaches a terminal status.
    """
    from .dispatch import GlobalAction  # deferred to avoid a module cycle

    rng = np.random.default_rng(seed)
    state = initial_state(cfg, rng)
    registry: dict[int, Request] = {}
    empty_stream = RequestStream(entries=[], metadata={})
    log = EpisodeLog(config=cfg, stream_metadata=dict(stream.metadata), seed=seed)

    for step in range(cfg.episode_length + 1):
        if state.open_requests:
            action, annotations = policy.decide(state, cfg, rng, mode)
        else:
            action, annotations = GlobalAction(()), {}
        veh_zones = [v.zone for v in state.vehicles]
        dest_counts = {
            r.id: sum(1 for v in state.vehicles if v.zone == r.destination_zone)
            for r in state.open_requests
        }
        batch = list(state.open_requests)
        result = apply_dispatch(state, action, stream, cfg, registry)
        assigned_by_request = {rid: vid for vid, rid in action.assignments}
        decisions = [
            DecisionRecord(
                request_id=r.id,
                origin_zone=r.origin_zone,
                destination_zone=r.destination_zone,
                placement_step=r.placement_step,
                assigned_vehicle=assigned_by_request.get(r.id),
                profit=result.per_agent_profits.get((assigned_by_request.get(r.id), r.id)),
                best_profit=annotations[r.id].best_profit if r.id in annotations else None,
                best_vehicle_zone=(
                    annotations[r.id].best_vehicle_zone if r.id in annotations else None
                ),
                dest_vehicles=dest_counts[r.id],
            )
            for r in batch
        ]
        log.steps.append(
            StepRecord(
                step=step,
                decisions=decisions,
                global_profit=result.global_profit,
                pickups=result.pickups,
                dropoffs=result.dropoffs,
                vehicle_zones=veh_zones,
            )
        )

    drained = 0
    while not all(v.idle for v in state.vehicles):
        result = apply_dispatch(state, GlobalAction(()), empty_stream, cfg, registry)
        log.drain_pickups.extend(result.pickups)
        log.drain_dropoffs.extend(result.dropoffs)
        drained += 1
        if drained > _MAX_DRAIN_STEPS:
            raise RuntimeError("vehicles failed to drain after the episode")

    statuses = [r.status for r in registry.values()]
    log.summary = {
        "total_profit": log.total_profit(),
        "n_requests": len(registry),
        "n_completed": statuses.count(COMPLETED),
        "n_rejected": statuses.count(REJECTED),
        "drain_steps": drained,
    }
    return log
