"""Learning algorithms: replay, SAC-discrete updates, COMA advantages, schedules.

Seven algorithm configurations share one loop:

* LRA        -- twin critics on per-agent profits, plain SAC actor loss.
* GRA        -- twin critics on the normalized summed step profit.
* LGRA       -- twin critics on a static local/global reward mix.
* COMAequ    -- global critics, advantage vs. equally-weighted baseline.
* COMAtgt    -- global critics, advantage vs. target-actor baseline.
* COMAadj    -- beta-scheduled blend of the two baselines.
* COMAscd    -- four critics, kappa-scheduled blend of the local SAC loss
                and the COMAadj loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .dispatch import (
    GlobalAction,
    enumerate_agents,
    score_agents,
    solve_matching,
)
from .features import (
    ActionSetBatch,
    ObsBatch,
    Observation,
    build_action_sets,
    encode_observation,
    stack_observations,
)
from .nets import ActorNet, Adam, TwinCriticNet, backward_and_step, clone_network, soft_update
from .sim import EpisodeConfig, SimState, decision_annotations, initial_state, rollout
from .streams import RequestStream

ALGORITHMS = ("LRA", "GRA", "LGRA", "COMAequ", "COMAtgt", "COMAadj", "COMAscd")


class TrainingAbort(RuntimeError):
    """A gradient step produced a non-finite quantity."""


# -- schedules ----------------------------------------------------------------


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str  # linear | power | jump
    param: float | None = None

    def __post_init__(self):
        if self.kind not in ("linear", "power", "jump"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "power" and (self.param is None or self.param <= 0):
            raise ValueError("power schedule needs a positive exponent")
        if self.kind == "jump" and (self.param is None or not 0 <= self.param <= 1):
            raise ValueError("jump schedule needs a fraction in [0, 1]")


@dataclass
class ScheduleState:
    step: int
    total_steps: int
    beta_schedule: ScheduleSpec = ScheduleSpec("linear")
    kappa_schedule: ScheduleSpec = ScheduleSpec("power", 0.25)


def schedule_value(kind: str, sched: ScheduleState) -> float:
    """Weight in [0, 1] at the schedule's current step; 0 at start, 1 at the end."""
    spec = {"beta": sched.beta_schedule, "kappa": sched.kappa_schedule}[kind]
    if sched.step > sched.total_steps:
        raise ValueError("schedule stepped past total_steps")
    frac = sched.step / sched.total_steps
    if spec.kind == "linear":
        return frac
    if spec.kind == "power":
        return frac**spec.param
    return 0.0 if frac < spec.param else 1.0


# -- configuration ------------------------------------------------------------


@dataclass
class TrainingConfig:
    algorithm: str = "LRA"
    total_steps: int = 200_000
    alpha: float = 0.7
    gamma: float = 0.97
    actor_lr: float = 6e-4
    critic_lr: float = 3e-4
    batch_size: int = 32
    buffer_capacity: int = 100_000
    warmup_steps: int = 2_000
    tau: float = 0.005
    lgra_global_share: float = 0.6
    beta_schedule: ScheduleSpec = ScheduleSpec("linear")
    kappa_schedule: ScheduleSpec = ScheduleSpec("power", 0.25)
    validate_every: int = 5_000

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if not 0.0 <= self.lgra_global_share <= 1.0:
            raise ValueError("lgra_global_share must be in [0, 1]")


# -- replay -------------------------------------------------------------------


@dataclass
class AgentRecord:
    vehicle_id: int
    request_id: int
    obs: Observation
    action: int  # pre-matching accept/reject
    selected: bool  # post-matching outcome
    local_reward: float


@dataclass
class Transition:
    agents: list[AgentRecord]
    step_profit: float
    done: bool
    gap: int = 1  # env steps until the next decision state
    next_obs: list[Observation] = field(default_factory=list)
    next_selected: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def nonzero_reward_count(self) -> int:
        return sum(1 for a in self.agents if a.local_reward != 0.0)


class ReplayBuffer:
    """Ring buffer of transitions with a running non-zero-reward statistic."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._pos = 0
        self._nonzero_sum = 0

    def __len__(self) -> int:
        return len(self._items)

    def push(self, transition: Transition) -> None:
        count = transition.nonzero_reward_count()
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._nonzero_sum -= self._items[self._pos].nonzero_reward_count()
            self._items[self._pos] = transition
        self._nonzero_sum += count
        self._pos = (self._pos + 1) % self.capacity

    @property
    def mean_nonzero_rewards(self) -> float:
        if not self._items:
            return 0.0
        return self._nonzero_sum / len(self._items)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        idx = rng.integers(0, len(self._items), size=batch_size)
        return [self._items[i] for i in idx]


def normalized_global_reward(step_profit: float, buffer: ReplayBuffer) -> float:
    """Step profit divided by the buffer-average non-zero reward count (>= 1)."""
    if len(buffer) == 0:
        raise ValueError("buffer is empty")
    return step_profit / max(1.0, buffer.mean_nonzero_rewards)


# -- advantages and losses ------------------------------------------------------

_VARIANTS = ("coma", "equ", "tgt", "adj")


def advantage(variant: str, probs, target_probs, q, beta: float = 0.0):
    """Per-action advantage under the chosen counterfactual baseline.

    Works on plain arrays and on autodiff tensors; the last axis indexes
    the two actions.
    """
    if variant == "coma":
        return q - (probs * q).sum(axis=-1, keepdims=True)
    if variant == "equ":
        return q - q.mean(axis=-1, keepdims=True)
    if variant == "tgt":
        return q - (target_probs * q).sum(axis=-1, keepdims=True)
    if variant == "adj":
        equ = q - q.mean(axis=-1, keepdims=True)
        tgt = q - (target_probs * q).sum(axis=-1, keepdims=True)
        return (1.0 - beta) * equ + beta * tgt
    raise ValueError(f"unknown advantage variant {variant!r} (use one of {_VARIANTS})")


def _per_agent_loss(probs, inner):
    return (probs * inner).sum(axis=-1)


def actor_loss(
    variant: str,
    probs,
    target_probs,
    q_local,
    q_global,
    alpha: float,
    beta: float = 0.0,
    kappa: float = 0.0,
    log_probs=None,
):
    """Policy loss, averaged over agents.

    `log_probs` may be supplied for numerical stability; otherwise it is
    recomputed from `probs`. Array and tensor inputs both work.
    """
    if log_probs is None:
        log_probs = ad.log(probs) if isinstance(probs, ad.Tensor) else np.log(probs)
    entropy_term = alpha * log_probs
    if variant == "local":
        loss = _per_agent_loss(probs, entropy_term - q_local)
    elif variant == "naive_coma":
        a = advantage("coma", probs, target_probs, q_global)
        loss = _per_agent_loss(probs, entropy_term - a)
    elif variant == "adj":
        a = advantage("adj", probs, target_probs, q_global, beta)
        loss = _per_agent_loss(probs, entropy_term - a)
    elif variant == "scheduled":
        local = _per_agent_loss(probs, entropy_term - q_local)
        a = advantage("adj", probs, target_probs, q_global, beta)
        adj = _per_agent_loss(probs, entropy_term - a)
        loss = (1.0 - kappa) * local + kappa * adj
    else:
        raise ValueError(f"unknown actor loss variant {variant!r}")
    return loss.mean()


# -- networks bundle ---------------------------------------------------------

@dataclass
class NetSet:
    actor: ActorNet
    target_actor: ActorNet
    critics: dict[str, TwinCriticNet]
    target_critics: dict[str, TwinCriticNet]
    actor_opt: Adam
    critic_opts: dict[str, Adam]

    @classmethod
    def build(cls, seed: int, cfg: TrainingConfig) -> "NetSet":
        seeds = np.random.SeedSequence(seed).generate_state(3)
        actor = ActorNet(seed=int(seeds[0]))
        critics = {
            name: TwinCriticNet(seed=int(s))
            for name, s in zip(("local", "global"), seeds[1:])
        }
        return cls(
            actor=actor,
            target_actor=clone_network(actor),
            critics=critics,
            target_critics={k: clone_network(v) for k, v in critics.items()},
            actor_opt=Adam(actor.params(), lr=cfg.actor_lr, flat_values=actor.flat_values),
            critic_opts={
                k: Adam(v.params(), lr=cfg.critic_lr, flat_values=v.flat_values)
                for k, v in critics.items()
            },
        )

    def all_nets(self) -> dict:
        out = {"actor": self.actor, "target_actor": self.target_actor}
        out.update(self.critics)
        out.update({f"target_{k}": v for k, v in self.target_critics.items()})
        return out


def _trained_pairs(algorithm: str) -> list[tuple[str, str]]:
    """(pair name, reward kind) updated per gradient step."""
    return {
        "LRA": [("local", "local")],
        "GRA": [("global", "global")],
        "LGRA": [("local", "mixed")],
        "COMAequ": [("global", "global")],
        "COMAtgt": [("global", "global")],
        "COMAadj": [("global", "global")],
        "COMAscd": [("local", "local"), ("global", "global")],
    }[algorithm]


# -- batched update machinery --------------------------------------------------


@dataclass
class BatchData:
    obs: ObsBatch
    acts: ActionSetBatch
    actions: np.ndarray  # (N,)
    local_rewards: np.ndarray  # (N,)
    tr_index: np.ndarray  # (N,) agent -> transition
    step_profits: np.ndarray  # (B,)
    dones: np.ndarray  # (B,)
    gaps: np.ndarray  # (B,)
    next_obs: ObsBatch  # stacked next-state agents (may be empty)
    next_acts: ActionSetBatch
    next_tr_index: np.ndarray  # (NN,)
    n_transitions: int


def assemble_batch(batch: list[Transition]) -> BatchData:
    obs_list: list[Observation] = []
    actions: list[int] = []
    local_rewards: list[float] = []
    tr_index: list[int] = []
    groups: list[list[int]] = []
    annotations: list[np.ndarray] = []
    selected: list[bool] = []
    for b, tr in enumerate(batch):
        group = []
        for rec in tr.agents:
            group.append(len(obs_list))
            obs_list.append(rec.obs)
            annotations.append(rec.obs.own)
            selected.append(rec.selected)
            actions.append(rec.action)
            local_rewards.append(rec.local_reward)
            tr_index.append(b)
        groups.append(group)

    next_obs_list: list[Observation] = []
    next_groups: list[list[int]] = []
    next_annotations: list[np.ndarray] = []
    next_selected: list[bool] = []
    next_tr_index: list[int] = []
    for b, tr in enumerate(batch):
        group = []
        for j, o in enumerate(tr.next_obs):
            group.append(len(next_obs_list))
            next_obs_list.append(o)
            next_annotations.append(o.own)
            next_selected.append(bool(tr.next_selected[j]))
            next_tr_index.append(b)
        next_groups.append(group)

    return BatchData(
        obs=stack_observations(obs_list),
        acts=build_action_sets(annotations, np.array(selected, dtype=bool), groups),
        actions=np.array(actions, dtype=np.int64),
        local_rewards=np.array(local_rewards, dtype=float),
        tr_index=np.array(tr_index, dtype=np.int64),
        step_profits=np.array([tr.step_profit for tr in batch], dtype=float),
        dones=np.array([tr.done for tr in batch], dtype=float),
        gaps=np.array([tr.gap for tr in batch], dtype=float),
        next_obs=stack_observations(next_obs_list),
        next_acts=build_action_sets(
            next_annotations, np.array(next_selected, dtype=bool), next_groups
        ),
        next_tr_index=np.array(next_tr_index, dtype=np.int64),
        n_transitions=len(batch),
    )


def _next_policy_terms(data: BatchData, nets: NetSet) -> tuple[np.ndarray, np.ndarray]:
    if len(data.next_obs) == 0:
        return np.zeros((0, 2)), np.zeros((0, 2))
    with ad.no_grad():
        probs, log_probs = nets.actor.forward(data.next_obs)
    return probs.values, log_probs.values


def _soft_state_values(
    data: BatchData,
    nets: NetSet,
    pair: str,
    alpha: float,
    next_probs: np.ndarray,
    next_log_probs: np.ndarray,
) -> np.ndarray:
    """Mean soft value of the next decision state, per transition."""
    v = np.zeros(data.n_transitions)
    if len(data.next_obs) == 0:
        return v
    q = nets.target_critics[pair].min_q(data.next_obs, data.next_acts)
    per_agent = (next_probs * (q - alpha * next_log_probs)).sum(axis=1)
    sums = np.zeros(data.n_transitions)
    counts = np.zeros(data.n_transitions)
    np.add.at(sums, data.next_tr_index, per_agent)
    np.add.at(counts, data.next_tr_index, 1.0)
    nonzero = counts > 0
    v[nonzero] = sums[nonzero] / counts[nonzero]
    return v


def _rewards_for(data: BatchData, buffer: ReplayBuffer, cfg: TrainingConfig, kind: str):
    if kind == "local":
        return data.local_rewards
    norm = data.step_profits / max(1.0, buffer.mean_nonzero_rewards)
    if kind == "global":
        return norm[data.tr_index]
    if kind == "mixed":
        w = cfg.lgra_global_share
        return (1.0 - w) * data.local_rewards + w * norm[data.tr_index]
    raise ValueError(f"unknown reward kind {kind!r}")


def _critic_update_assembled(
    data: BatchData,
    nets: NetSet,
    buffer: ReplayBuffer,
    cfg: TrainingConfig,
    pair: str,
    reward_kind: str,
    next_probs: np.ndarray,
    next_log_probs: np.ndarray,
) -> tuple[float, float]:
    r = _rewards_for(data, buffer, cfg, reward_kind)
    v_next = _soft_state_values(data, nets, pair, cfg.alpha, next_probs, next_log_probs)
    discount = cfg.gamma ** data.gaps * (1.0 - data.dones)
    y = r + (discount * v_next)[data.tr_index]
    if not np.isfinite(y).all():
        raise TrainingAbort("non-finite critic target")
    q = nets.critics[pair].forward(data.obs, data.acts)  # (2, N, 2)
    err = ad.twin_gather(q, data.actions) - y
    per_twin = (err * err).mean(axis=1)
    backward_and_step(per_twin.sum(), nets.critic_opts[pair])
    return float(per_twin.values[0]), float(per_twin.values[1])


def critic_update(
    batch: list[Transition],
    nets: NetSet,
    buffer: ReplayBuffer,
    cfg: TrainingConfig,
    reward_kind: str,
) -> tuple[float, float]:
    """Regress one twin-critic pair toward the soft SAC target.

    `reward_kind` selects the per-agent reward (local profit, normalized
    global profit, or the LGRA mix) and implicitly the critic pair: local
    and mixed rewards train the local pair, global rewards the global pair.
    """
    data = assemble_batch(batch)
    next_probs, next_log_probs = _next_policy_terms(data, nets)
    pair = "global" if reward_kind == "global" else "local"
    return _critic_update_assembled(
        data, nets, buffer, cfg, pair, reward_kind, next_probs, next_log_probs
    )


def _min_q(data: BatchData, nets: NetSet, pair: str) -> np.ndarray:
    return nets.critics[pair].min_q(data.obs, data.acts)


def _actor_update_assembled(
    data: BatchData, nets: NetSet, cfg: TrainingConfig, sched: ScheduleState
) -> dict:
    algorithm = cfg.algorithm
    beta = schedule_value("beta", sched)
    kappa = schedule_value("kappa", sched)
    if algorithm == "COMAequ":
        beta = 0.0
    elif algorithm == "COMAtgt":
        beta = 1.0

    q_local = q_global = None
    if algorithm in ("LRA", "LGRA", "COMAscd"):
        q_local = _min_q(data, nets, "local")
    if algorithm == "GRA":
        q_local = _min_q(data, nets, "global")
    if algorithm.startswith("COMA"):
        q_global = _min_q(data, nets, "global")

    if algorithm in ("COMAtgt", "COMAadj", "COMAscd"):
        with ad.no_grad():
            target_probs = nets.target_actor.forward(data.obs)[0].values
    else:
        target_probs = np.zeros((len(data.obs), 2))

    variant = {
        "LRA": "local",
        "GRA": "local",
        "LGRA": "local",
        "COMAequ": "adj",
        "COMAtgt": "adj",
        "COMAadj": "adj",
        "COMAscd": "scheduled",
    }[algorithm]

    probs, log_probs = nets.actor.forward(data.obs)
    loss = actor_loss(
        variant,
        probs,
        target_probs,
        q_local,
        q_global,
        cfg.alpha,
        beta=beta,
        kappa=kappa,
        log_probs=log_probs,
    )
    loss_value = backward_and_step(loss, nets.actor_opt)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = probs.values
        entropy = float(-(p * np.where(p > 0, np.log(p), 0.0)).sum(axis=1).mean())
    return {"actor_loss": loss_value, "entropy": entropy, "beta": beta, "kappa": kappa}


# -- environment interaction ----------------------------------------------------


class DispatchWorld:
    """Streamed episodes plus the delayed-transition bookkeeping.

    Owns the simulator state, the episode stream rotation, and the action
    RNG. Completed transitions become available one decision step late,
    when the realized next-state actions are known.
    """

    def __init__(
        self,
        env_cfg: EpisodeConfig,
        streams: list[RequestStream],
        seed: int,
    ):
        if not streams:
            raise ValueError("need at least one training stream")
        self.env_cfg = env_cfg
        self.streams = streams
        self.rng = np.random.default_rng(seed)
        self._stream_idx = -1
        self.state: SimState | None = None
        self._registry: dict = {}
        self._pending: Transition | None = None
        self._pending_gap = 0
        self.episode_return = 0.0
        self.last_episode_return: float | None = None
        self.agents = None
        self.observations: list[Observation] = []
        self._reset_episode()

    def _reset_episode(self) -> None:
        self._stream_idx = (self._stream_idx + 1) % len(self.streams)
        self.stream = self.streams[self._stream_idx]
        self.state = initial_state(self.env_cfg, self.rng)
        self._registry = {}
        self.episode_return = 0.0
        self._refresh_agents()

    def _refresh_agents(self) -> None:
        self.agents = enumerate_agents(self.state, self.env_cfg.grid)
        self.observations = [
            encode_observation(self.state, a, self.env_cfg.grid, self.env_cfg)
            for a in self.agents
        ]

    def interact(self, actor: ActorNet, warmup: bool) -> list[Transition]:
        """One environment step; returns the transitions completed by it."""
        from .sim import apply_dispatch

        cfg = self.env_cfg
        agents = list(self.agents)
        obs_list = list(self.observations)
        n = len(agents)
        selected = np.zeros(0, dtype=bool)
        if n:
            if warmup:
                probs = np.full((n, 2), 0.5)
            else:
                probs = actor.probs(stack_observations(obs_list))
            actions, scores = score_agents(probs, "train", self.rng)
            action = solve_matching(self.agents, scores)
            chosen = set(action.assignments)
            selected = np.array(
                [(a.vehicle_id, a.request_id) in chosen for a in agents], dtype=bool
            )
        else:
            action = GlobalAction(())

        result = apply_dispatch(self.state, action, self.stream, cfg, self._registry)
        self.episode_return += result.global_profit
        done = self.state.step >= cfg.episode_length

        completed: list[Transition] = []
        if self._pending is not None and n:
            self._pending.next_obs = obs_list
            self._pending.next_selected = selected
            self._pending.gap = self._pending_gap
            completed.append(self._pending)
            self._pending = None

        if n:
            records = [
                AgentRecord(
                    vehicle_id=a.vehicle_id,
                    request_id=a.request_id,
                    obs=o,
                    action=int(actions[i]),
                    selected=bool(selected[i]),
                    local_reward=result.per_agent_profits.get(
                        (a.vehicle_id, a.request_id), 0.0
                    ),
                )
                for i, (a, o) in enumerate(zip(agents, obs_list))
            ]
            transition = Transition(
                agents=records,
                step_profit=result.global_profit,
                done=done,
                gap=1,
            )
            if done:
                completed.append(transition)
            else:
                self._pending = transition
                self._pending_gap = 1
        elif self._pending is not None:
            if done:
                self._pending.done = True
                completed.append(self._pending)
                self._pending = None
            else:
                self._pending_gap += 1

        if done:
            self.last_episode_return = self.episode_return
            self._reset_episode()
        else:
            self._refresh_agents()
        return completed


def train_step(
    world: DispatchWorld,
    nets: NetSet,
    buffer: ReplayBuffer,
    cfg: TrainingConfig,
    sched: ScheduleState,
) -> dict:
    """One environment step plus (after warmup) one gradient step."""
    warmup = sched.step < cfg.warmup_steps
    for completed in world.interact(nets.actor, warmup):
        if completed.agents:
            buffer.push(completed)

    metrics: dict = {
        "step": sched.step,
        "buffer": len(buffer),
        "episode_return": world.last_episode_return,
    }
    world.last_episode_return = None

    if not warmup and len(buffer) >= cfg.batch_size:
        batch = buffer.sample(cfg.batch_size, world.rng)
        data = assemble_batch(batch)
        next_probs, next_log_probs = _next_policy_terms(data, nets)
        for pair, reward_kind in _trained_pairs(cfg.algorithm):
            l1, l2 = _critic_update_assembled(
                data, nets, buffer, cfg, pair, reward_kind, next_probs, next_log_probs
            )
            metrics[f"critic_{pair}_1"] = l1
            metrics[f"critic_{pair}_2"] = l2
        metrics.update(_actor_update_assembled(data, nets, cfg, sched))
        for pair, _ in _trained_pairs(cfg.algorithm):
            soft_update(nets.target_critics[pair], nets.critics[pair], cfg.tau)
        soft_update(nets.target_actor, nets.actor, cfg.tau)

    sched.step += 1
    return metrics


# -- evaluation ----------------------------------------------------------------


class ActorPolicy:
    """Dispatch policy backed by an actor network."""

    def __init__(self, actor: ActorNet):
        self.actor = actor

    def decide(self, state, cfg, rng, mode):
        agents = enumerate_agents(state, cfg.grid)
        if not len(agents):
            return GlobalAction(()), {}
        obs = [encode_observation(state, a, cfg.grid, cfg) for a in agents.agents]
        probs = self.actor.probs(stack_observations(obs))
        _, scores = score_agents(probs, mode, rng)
        action = solve_matching(agents, scores)
        return action, decision_annotations(state, cfg.grid, cfg)


VALIDATION_SEED_BASE = 7_000_000


def validate(
    nets: NetSet, streams: list[RequestStream], env_cfg: EpisodeConfig
) -> float:
    """Mean test-mode episode profit over the validation streams."""
    policy = ActorPolicy(nets.actor)
    profits = [
        rollout(policy, env_cfg, s, seed=VALIDATION_SEED_BASE + i, mode="test").total_profit()
        for i, s in enumerate(streams)
    ]
    return float(np.mean(profits))


# -- run orchestration -----------------------------------------------------------


class Trainer:
    """Owns one training run end to end.

    Wires the world, networks, buffer, and schedules together; tracks the
    best-validation checkpoint; writes one metrics record per training step
    when an output directory is given.
    """

    def __init__(
        self,
        env_cfg: EpisodeConfig,
        train_streams: list[RequestStream],
        val_streams: list[RequestStream],
        cfg: TrainingConfig,
        seed: int,
        out_dir=None,
    ):
        from pathlib import Path

        ss = np.random.SeedSequence(seed)
        net_seed, world_seed = (int(s) for s in ss.generate_state(2))
        self.cfg = cfg
        self.env_cfg = env_cfg
        self.seed = seed
        self.nets = NetSet.build(net_seed, cfg)
        self.buffer = ReplayBuffer(cfg.buffer_capacity)
        self.sched = ScheduleState(
            step=0,
            total_steps=cfg.total_steps,
            beta_schedule=cfg.beta_schedule,
            kappa_schedule=cfg.kappa_schedule,
        )
        self.world = DispatchWorld(env_cfg, train_streams, world_seed)
        self.val_streams = val_streams
        self.best_validation: float | None = None
        self.validations: list[tuple[int, float]] = []
        self.out_dir = None
        if out_dir is not None:
            self.out_dir = Path(out_dir)
            self.out_dir.mkdir(parents=True, exist_ok=True)

    # -- checkpoints ----------------------------------------------------

    def _checkpoint_meta(self) -> dict:
        return {
            "step": self.sched.step,
            "seed": self.seed,
            "algorithm": self.cfg.algorithm,
            "best_validation": self.best_validation,
            "env_cfg": self.env_cfg.to_dict(),
        }

    def save_checkpoint(self, path) -> None:
        from .nets import save_checkpoint

        opts = {"actor": self.nets.actor_opt}
        opts.update({f"critic_{k}": o for k, o in self.nets.critic_opts.items()})
        save_checkpoint(
            path,
            nets=self.nets.all_nets(),
            optimizers=opts,
            rng_states={"world": self.world.rng.bit_generator.state},
            meta=self._checkpoint_meta(),
        )

    def load_checkpoint(self, path) -> dict:
        from .nets import load_checkpoint

        opts = {"actor": self.nets.actor_opt}
        opts.update({f"critic_{k}": o for k, o in self.nets.critic_opts.items()})
        header = load_checkpoint(path, nets=self.nets.all_nets(), optimizers=opts)
        state = header["rng_states"].get("world")
        if state is not None:
            self.world.rng.bit_generator.state = state
        meta = header["meta"]
        self.sched.step = int(meta["step"])
        self.best_validation = meta.get("best_validation")
        return meta

    # -- main loop -------------------------------------------------------

    def validate_now(self) -> float:
        score = validate(self.nets, self.val_streams, self.env_cfg)
        self.validations.append((self.sched.step, score))
        if self.best_validation is None or score > self.best_validation:
            self.best_validation = score
            if self.out_dir is not None:
                self.save_checkpoint(self.out_dir / "best.npz")
        return score

    def run(self, steps: int | None = None, log_every: int = 1) -> list[dict]:
        """Train until `steps` more steps (default: to total_steps) are done."""
        import json

        target = self.cfg.total_steps if steps is None else self.sched.step + steps
        target = min(target, self.cfg.total_steps)
        history: list[dict] = []
        metrics_fh = None
        if self.out_dir is not None:
            metrics_fh = (self.out_dir / "metrics.jsonl").open("a")
        try:
            while self.sched.step < target:
                m = train_step(self.world, self.nets, self.buffer, self.cfg, self.sched)
                if self.sched.step % self.cfg.validate_every == 0 or (
                    self.sched.step == self.cfg.total_steps
                ):
                    m["validation"] = self.validate_now()
                history.append(m)
                if metrics_fh is not None and (
                    self.sched.step % log_every == 0 or "validation" in m
                ):
                    metrics_fh.write(json.dumps(m) + "\n")
            if self.out_dir is not None:
                self.save_checkpoint(self.out_dir / "last.npz")
                with (self.out_dir / "validation.jsonl").open("w") as fh:
                    for step, score in self.validations:
                        fh.write(json.dumps({"step": step, "score": score}) + "\n")
        finally:
            if metrics_fh is not None:
                metrics_fh.close()
        return history
