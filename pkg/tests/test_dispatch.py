import numpy as np
import pytest

from amodlab.dispatch import (
    ACTION_ACCEPT,
    ACTION_REJECT,
    Agent,
    AgentSet,
    GreedyPolicy,
    enumerate_agents,
    greedy_dispatch,
    score_agents,
    solve_matching,
    total_score,
)
from amodlab.sim import EpisodeConfig, Request, SimState, Vehicle, rollout
from amodlab.streams import RequestStream, StreamEntry


def brute_force_best(agents: AgentSet, scores: np.ndarray) -> float:
    """Exact max-total-score matching via DP over vehicle bitmasks.

    Independent of the augmenting-path solver: request-by-request dynamic
    program where each request either stays unassigned or takes any free
    vehicle with positive score.
    """
    pairs: dict[tuple[int, int], float] = {}
    for agent, s in zip(agents.agents, scores):
        if s > 0:
            pairs[(agent.request_id, agent.vehicle_id)] = float(s)
    request_ids = sorted({r for r, _ in pairs})
    vehicle_ids = sorted({v for _, v in pairs})
    v_index = {v: i for i, v in enumerate(vehicle_ids)}
    n_v = len(vehicle_ids)
    best = {0: 0.0}
    for rid in request_ids:
        nxt = dict(best)
        for mask, value in best.items():
            for vid in vehicle_ids:
                s = pairs.get((rid, vid))
                if s is None:
                    continue
                bit = 1 << v_index[vid]
                if mask & bit:
                    continue
                cand = value + s
                key = mask | bit
                if cand > nxt.get(key, -1.0):
                    nxt[key] = cand
        best = nxt
    return max(best.values()) if best else 0.0


def random_instance(rng) -> tuple[AgentSet, np.ndarray]:
    n_veh = int(rng.integers(1, 7))
    n_req = int(rng.integers(1, 7))
    agents = []
    scores = []
    for r in range(n_req):
        for v in range(n_veh):
            if rng.random() < 0.75:  # sparse instances too
                agents.append(Agent(vehicle_id=v, request_id=r))
                scores.append(float(rng.random()) if rng.random() < 0.9 else 0.0)
    return AgentSet(agents), np.array(scores)


class TestScoreAgents:
    def test_test_mode_argmax(self):
        probs = np.array([[0.9, 0.1], [0.2, 0.8]])
        actions, scores = score_agents(probs, "test")
        assert actions.tolist() == [ACTION_ACCEPT, ACTION_REJECT]
        assert scores.tolist() == [0.9, 0.0]

    def test_train_mode_frequency(self):
        rng = np.random.default_rng(0)
        probs = np.tile([0.7, 0.3], (10_000, 1))
        actions, scores = score_agents(probs, "train", rng)
        freq = (actions == ACTION_ACCEPT).mean()
        assert freq == pytest.approx(0.7, abs=0.02)
        accepted = actions == ACTION_ACCEPT
        assert np.all(scores[accepted] == 0.7)
        assert np.all(scores[~accepted] == 0.0)

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            score_agents(np.ones((2, 3)), "test")
        with pytest.raises(ValueError):
            score_agents(np.ones((2, 2)) / 2, "train")  # rng required
        with pytest.raises(ValueError):
            score_agents(np.ones((2, 2)) / 2, "evaluate")


class TestSolveMatching:
    def test_one_vehicle_two_requests_dominance(self):
        agents = AgentSet([Agent(0, 10), Agent(0, 11)])
        action = solve_matching(agents, np.array([0.9, 0.8]))
        assert action.assignments == ((0, 10),)

    def test_spec_2x2_instance(self):
        agents = AgentSet([Agent(1, 1), Agent(1, 2), Agent(2, 1), Agent(2, 2)])
        scores = np.array([0.6, 0.9, 0.8, 0.1])
        action = solve_matching(agents, scores)
        assert set(action.assignments) == {(2, 1), (1, 2)}
        assert total_score(action, agents, scores) == pytest.approx(1.7)

    def test_all_zero_scores_empty(self):
        agents = AgentSet([Agent(0, 0), Agent(1, 1)])
        assert solve_matching(agents, np.zeros(2)).assignments == ()

    def test_zero_score_excluded_even_if_only_option(self):
        agents = AgentSet([Agent(0, 0), Agent(1, 1)])
        action = solve_matching(agents, np.array([0.0, 0.4]))
        assert action.assignments == ((1, 1),)

    def test_tie_break_lexicographic(self):
        agents = AgentSet(
            [Agent(v, r) for r in range(3) for v in range(3)]
        )
        action = solve_matching(agents, np.full(9, 0.5))
        assert action.assignments == ((0, 0), (1, 1), (2, 2))

    def test_tie_break_prefers_low_request_then_vehicle(self):
        # two optimal assignments: {(v0,r0),(v1,r1)} and {(v1,r0),(v0,r1)}
        agents = AgentSet([Agent(0, 0), Agent(1, 0), Agent(0, 1), Agent(1, 1)])
        action = solve_matching(agents, np.array([0.5, 0.5, 0.5, 0.5]))
        assert action.assignments == ((0, 0), (1, 1))

    def test_negative_scores_rejected(self):
        with pytest.raises(ValueError):
            solve_matching(AgentSet([Agent(0, 0)]), np.array([-0.1]))

    def test_oracle_1000_random_instances(self):
        rng = np.random.default_rng(1234)
        for _ in range(1000):
            agents, scores = random_instance(rng)
            action = solve_matching(agents, scores)
            assert total_score(action, agents, scores) == brute_force_best(agents, scores)

    def test_oracle_with_exact_ties(self):
        rng = np.random.default_rng(99)
        for _ in range(200):
            agents, scores = random_instance(rng)
            quantized = np.round(scores * 4) / 4  # force many exact ties
            action = solve_matching(agents, quantized)
            assert total_score(action, agents, quantized) == brute_force_best(
                agents, quantized
            )

    def test_determinism(self):
        rng = np.random.default_rng(7)
        agents, scores = random_instance(rng)
        a1 = solve_matching(agents, scores)
        a2 = solve_matching(agents, scores)
        assert a1 == a2


class TestGreedy:
    def test_single_profitable_request_accepted(self, grid5, env5):
        state = SimState(
            step=1,
            vehicles=[Vehicle(id=0, zone=2)],
            open_requests=[Request(0, 2, 4, 0)],
        )
        action, ann = greedy_dispatch(state, grid5, env5)
        assert action.assignments == ((0, 0),)
        assert ann[0].best_profit > 0

    def test_negative_best_profit_rejected(self, grid5, env5):
        # vehicle one hop away: approach cost exceeds the trip margin
        state = SimState(
            step=1,
            vehicles=[Vehicle(id=0, zone=1)],
            open_requests=[Request(0, 2, 3, 0)],
        )
        action, ann = greedy_dispatch(state, grid5, env5)
        assert action.assignments == ()
        assert ann[0].best_profit < 0

    def test_arrival_order_wins_contention(self, grid5, env5):
        # both requests want the only in-zone vehicle; the earlier-submitted
        # one gets it even though the later one pays more
        state = SimState(
            step=1,
            vehicles=[Vehicle(id=0, zone=1)],
            open_requests=[Request(0, 1, 2, 0), Request(1, 1, 4, 0)],
        )
        action, ann = greedy_dispatch(state, grid5, env5)
        assert action.assignments == ((0, 0),)
        assert ann[1].best_profit is None  # no vehicle left at its turn

    def test_highest_profit_vehicle_chosen(self, grid5, env5):
        # vehicle 1 sits in the origin zone (no approach cost), vehicle 0 afar
        state = SimState(
            step=1,
            vehicles=[Vehicle(id=0, zone=0), Vehicle(id=1, zone=3)],
            open_requests=[Request(0, 3, 1, 0)],
        )
        action, _ = greedy_dispatch(state, grid5, env5)
        assert action.assignments == ((1, 0),)


class TestAgentEnumeration:
    def test_only_feasible_pairs(self, grid5):
        state = SimState(
            step=1,
            vehicles=[Vehicle(id=0, zone=0), Vehicle(id=1, zone=4)],
            open_requests=[Request(0, 0, 2, 0)],
        )
        agents = enumerate_agents(state, grid5)
        assert [(a.vehicle_id, a.request_id) for a in agents] == [(0, 0)]

    def test_order_is_request_then_vehicle(self, grid5):
        state = SimState(
            step=1,
            vehicles=[Vehicle(id=0, zone=2), Vehicle(id=1, zone=2)],
            open_requests=[Request(1, 2, 3, 0), Request(0, 2, 4, 0)],
        )
        agents = enumerate_agents(state, grid5)
        assert [(a.request_id, a.vehicle_id) for a in agents] == [
            (0, 0), (0, 1), (1, 0), (1, 1),
        ]


class TestPolicyActionValidity:
    def test_all_emitted_actions_validate(self, grid5):
        # apply_dispatch validates every action; a full rollout passing means
        # the policy never emitted a constraint-violating assignment
        cfg = EpisodeConfig(grid=grid5, n_vehicles=3)
        entries = [StreamEntry(i, s, s % 4, (s % 4) + 1) for i, s in enumerate(range(40))]
        stream = RequestStream(entries=entries, metadata={})
        log = rollout(GreedyPolicy(), cfg, stream, seed=1)
        assert log.summary["n_requests"] == 40
