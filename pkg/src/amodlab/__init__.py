"""amodlab: desk-scale laboratory for profit-maximizing AMoD dispatching.

Request streams replay into a zone-grid fleet simulator; per-agent
accept/reject actors feed a global bipartite matching; seven training
algorithms (local, global, mixed, and counterfactual-baseline rewards)
share one soft actor-critic loop; analysis tooling measures rejection
structure and anticipation.
"""

from .hexgrid import ZoneGrid, build_hex_grid, grid_from_axial
from .sim import (
    EpisodeConfig,
    EpisodeLog,
    Request,
    SimState,
    Vehicle,
    apply_dispatch,
    feasible,
    initial_state,
    profit,
    rollout,
)
from .streams import RequestStream, ingest_trips, synth_stream
from .dispatch import (
    Agent,
    AgentSet,
    GlobalAction,
    GreedyPolicy,
    RandomPolicy,
    enumerate_agents,
    greedy_dispatch,
    score_agents,
    solve_matching,
)
from .features import Observation, encode_observation, stack_observations
from .nets import ActorNet, Adam, TwinCriticNet, actor_forward, critic_forward, soft_update
from .training import (
    ALGORITHMS,
    ActorPolicy,
    NetSet,
    ReplayBuffer,
    ScheduleSpec,
    ScheduleState,
    Trainer,
    TrainingConfig,
    Transition,
    actor_loss,
    advantage,
    critic_update,
    normalized_global_reward,
    schedule_value,
    train_step,
    validate,
)
from .analysis import (
    PolicyReport,
    aggregate_scores,
    overperformance_ratio,
    rejection_breakdown,
    wilcoxon_signed_rank,
)
from .runconfig import RunConfig

__version__ = "0.1.0"
