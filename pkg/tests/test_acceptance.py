"""Acceptance suite: one test per criterion, each printing a PASS line.

Criteria 1-8 run in the default pytest invocation. Criteria 9-11 train
desk-scale models for hours and carry the `trend` marker; run them with
`pytest -m trend` (cached runs under AMODLAB_TREND_DIR are reused).
"""

import itertools
import time

import numpy as np
import pytest

import amodlab.autodiff as ad
from amodlab.analysis import (
    OriginalRequestRecord,
    overperformance_from_records,
    rejection_breakdown,
    wilcoxon_signed_rank,
)
from amodlab.dispatch import RandomPolicy, solve_matching, total_score
from amodlab.features import ActionSetBatch, Observation, stack_observations, ACT_DIM
from amodlab.nets import ActorNet, TwinCriticNet
from amodlab.sim import rollout
from amodlab.streams import synth_stream
from amodlab.training import (
    ScheduleSpec,
    ScheduleState,
    actor_loss,
    advantage,
    schedule_value,
)

from conftest import commute_instance
from test_dispatch import brute_force_best, random_instance


def ok(n: int, text: str):
    print(f"\n[criterion {n:>2}] {text}: PASS")


def random_prob_pairs(rng, n):
    p = rng.uniform(1e-3, 1 - 1e-3, size=(n, 1))
    return np.concatenate([p, 1.0 - p], axis=1)


class TestCriterion1EntropyCollapse:
    def test_loss_equals_entropy_on_10k_pairs(self):
        start = time.time()
        rng = np.random.default_rng(101)
        pi = random_prob_pairs(rng, 10_000)
        q = rng.normal(size=(10_000, 2)) * 25.0
        alpha = 0.7
        a = advantage("coma", pi, None, q)
        per_agent_loss = (pi * (alpha * np.log(pi) - a)).sum(axis=1)
        entropy_term = (pi * (alpha * np.log(pi))).sum(axis=1)
        assert np.abs(per_agent_loss - entropy_term).max() < 1e-9
        # aggregated operation-level check
        loss = actor_loss("naive_coma", pi, None, None, q, alpha=alpha)
        assert abs(float(loss) - entropy_term.mean()) < 1e-9
        assert time.time() - start < 60.0
        ok(1, "naive-baseline loss equals the entropy term (10,000 random pairs, 1e-9)")

    def test_parameter_gradient_matches_entropy_gradient(self):
        start = time.time()
        rng = np.random.default_rng(102)
        actor = ActorNet(seed=103)
        obs = [
            Observation(
                own=rng.normal(size=5),
                other_requests=rng.normal(size=(int(rng.integers(0, 3)), 5)),
                vehicles=rng.normal(size=(3, 5)),
            )
            for _ in range(5)
        ]
        batch = stack_observations(obs)
        q = rng.normal(size=(5, 2)) * 10.0
        alpha = 0.7
        probs, log_probs = actor.forward(batch)
        loss = actor_loss("naive_coma", probs, None, None, q, alpha=alpha, log_probs=log_probs)
        loss.backward()
        params = actor.params()
        grads = [p.grad.copy() if p.grad is not None else np.zeros_like(p.values) for p in params]

        def entropy_value() -> float:
            with ad.no_grad():
                pv, lv = actor.forward(batch)
            return float((pv.values * (alpha * lv.values)).sum(axis=1).mean())

        checked = 0
        while checked < 60:
            i = int(rng.integers(len(params)))
            p = params[i]
            idx = tuple(rng.integers(0, s) for s in p.values.shape)
            h = 1e-6
            p.values[idx] += h
            fp = entropy_value()
            p.values[idx] -= 2 * h
            fm = entropy_value()
            p.values[idx] += h
            fd = (fp - fm) / (2 * h)
            assert abs(grads[i][idx] - fd) <= 1e-6 * max(1.0, abs(fd))
            checked += 1
        assert time.time() - start < 60.0
        ok(1, "naive-baseline parameter gradient equals the entropy gradient (1e-6)")


class TestCriterion2MatchingOracle:
    def test_1000_random_instances_exact(self):
        start = time.time()
        rng = np.random.default_rng(202)
        for _ in range(1000):
            agents, scores = random_instance(rng)
            action = solve_matching(agents, scores)
            assert total_score(action, agents, scores) == brute_force_best(agents, scores)
        assert time.time() - start < 60.0
        ok(2, "matching equals brute-force enumeration on 1,000 instances, exactly")


class TestCriterion3AdvantageAlgebra:
    def test_identities_over_10k_inputs(self):
        rng = np.random.default_rng(303)
        n = 10_000
        pi = random_prob_pairs(rng, n)
        tgt = random_prob_pairs(rng, n)
        q = rng.normal(size=(n, 2)) * 30.0
        ql = rng.normal(size=(n, 2)) * 30.0

        a_coma = advantage("coma", pi, tgt, q)
        assert np.abs((pi * a_coma).sum(axis=1)).max() < 1e-12

        np.testing.assert_array_equal(
            advantage("adj", pi, tgt, q, beta=0.0), advantage("equ", pi, tgt, q)
        )
        np.testing.assert_array_equal(
            advantage("adj", pi, tgt, q, beta=1.0), advantage("tgt", pi, tgt, q)
        )

        alpha, beta = 0.7, 0.37
        k0 = actor_loss("scheduled", pi, tgt, ql, q, alpha=alpha, beta=beta, kappa=0.0)
        k1 = actor_loss("scheduled", pi, tgt, ql, q, alpha=alpha, beta=beta, kappa=1.0)
        assert float(k0) == float(actor_loss("local", pi, tgt, ql, q, alpha=alpha))
        assert float(k1) == float(actor_loss("adj", pi, tgt, ql, q, alpha=alpha, beta=beta))
        ok(3, "policy-weighted COMA advantage centered; adj/scheduled endpoints exact")


class TestCriterion4GradientChecks:
    def _probe(self, forward, params, rng, n_probes=100, tol=1e-4):
        out = forward()
        w = rng.normal(size=out.shape)
        loss = (out * w).sum() if isinstance(out, ad.Tensor) else None
        loss.backward()
        grads = [p.grad.copy() if p.grad is not None else np.zeros_like(p.values) for p in params]

        def value():
            with ad.no_grad():
                return float((forward().values * w).sum())

        checked = 0
        while checked < n_probes:
            i = int(rng.integers(len(params)))
            p = params[i]
            idx = tuple(rng.integers(0, s) for s in p.values.shape)
            h = 1e-6
            p.values[idx] += h
            fp = value()
            p.values[idx] -= 2 * h
            fm = value()
            p.values[idx] += h
            fd = (fp - fm) / (2 * h)
            g = grads[i][idx]
            assert abs(g - fd) <= tol * max(abs(g) + abs(fd), 1e-6), (i, idx, g, fd)
            checked += 1

    def test_actor_head(self):
        rng = np.random.default_rng(404)
        actor = ActorNet(seed=405)
        obs = [
            Observation(
                own=rng.normal(size=5),
                other_requests=rng.normal(size=(int(rng.integers(0, 4)), 5)),
                vehicles=rng.normal(size=(4, 5)),
            )
            for _ in range(4)
        ]
        batch = stack_observations(obs)
        self._probe(lambda: actor.forward(batch)[0], actor.params(), rng)
        ok(4, "actor head: backprop matches central differences (100 probes, 1e-4)")

    def test_critic_head(self):
        rng = np.random.default_rng(406)
        critic = TwinCriticNet(seed=407)
        obs = [
            Observation(
                own=rng.normal(size=5),
                other_requests=rng.normal(size=(2, 5)),
                vehicles=rng.normal(size=(4, 5)),
            )
            for _ in range(4)
        ]
        batch = stack_observations(obs)
        acts = ActionSetBatch(
            acts=rng.normal(size=(4, 3, ACT_DIM)), act_mask=rng.random((4, 3)) > 0.25
        )
        self._probe(lambda: critic.forward(batch, acts), critic.params(), rng)
        ok(4, "critic heads (twin pair): backprop matches central differences (100 probes, 1e-4)")


class TestCriterion5OverperformanceOracle:
    def test_worked_example_exactly_two(self):
        records = [
            OriginalRequestRecord(accepted=False, profit=10.0, subsequent_profits=[5.0, 12.0, 14.0]),
            OriginalRequestRecord(accepted=True, profit=10.0, subsequent_profits=[8.0, 11.0, 12.0]),
        ]
        assert overperformance_from_records(records) == 2.0
        ok(5, "worked overperformance example returns exactly 2.0")

    def test_50_randomized_logs_match_brute_force(self, grid5):
        from test_analysis import TestOverperformance

        TestOverperformance().test_randomized_logs_match_brute_force(grid5)
        ok(5, "50 randomized logs match brute-force recomputation (1e-9)")


class TestCriterion6WilcoxonExactness:
    def test_all_positive_n6(self):
        assert wilcoxon_signed_rank([(i + 1.0, 0.0) for i in range(6)]) == 0.03125
        ok(6, "all-positive n=6 case yields two-sided p = 0.03125")

    def test_matches_full_enumeration_up_to_12(self):
        rng = np.random.default_rng(606)
        cases = 0
        while cases < 25:
            n = int(rng.integers(5, 13))
            d = rng.normal(size=n)
            if cases % 3 == 0:
                d = np.round(d, 1)
            d = d[d != 0.0]
            if len(d) < 5:
                continue
            mine = wilcoxon_signed_rank([(float(x), 0.0) for x in d])

            absolute = np.abs(d)
            order = np.argsort(absolute, kind="stable")
            ranks = np.empty(len(d))
            s = absolute[order]
            i = 0
            while i < len(s):
                j = i
                while j < len(s) and s[j] == s[i]:
                    j += 1
                ranks[order[i:j]] = (i + j + 1) / 2
                i = j
            mu = len(d) * (len(d) + 1) / 4
            w_obs = ranks[d > 0].sum()
            count = sum(
                1
                for signs in itertools.product([0, 1], repeat=len(d))
                if abs(sum(r for sgn, r in zip(signs, ranks) if sgn) - mu)
                >= abs(w_obs - mu) - 1e-12
            )
            assert mine == pytest.approx(count / 2 ** len(d), abs=1e-12)
            cases += 1
        ok(6, "exact p-values match full 2^n enumeration for n <= 12")


class TestCriterion7SimulatorInvariants:
    def test_fuzz_rollouts(self, grid5):
        cfg = commute_instance(grid5)
        total_steps = 0
        episodes = 0
        i = 0
        while total_steps < 10_000:
            stream = synth_stream(
                grid5, np.array([0.05, 0.3, 0.1, 0.3, 0.05]), seed=70_000 + i
            )
            log = rollout(RandomPolicy(p_accept=0.6), cfg, stream, seed=i)
            total_steps += len(log.steps)
            episodes += 1
            i += 1

            # conservation
            assert log.summary["n_requests"] == len(stream)
            assert (
                log.summary["n_completed"] + log.summary["n_rejected"]
                == log.summary["n_requests"]
            )
            decided = [d.request_id for d in log.decisions()]
            assert len(decided) == len(set(decided)) == len(stream)

            # waiting time
            placed = {e.request_id: e.placement_step for e in stream.entries}
            pickups = dict(log.drain_pickups)
            for rec in log.steps:
                pickups.update(dict(rec.pickups))
            for rid, step in pickups.items():
                assert step <= placed[rid] + cfg.max_wait_steps

            # profit additivity
            for rec in log.steps:
                total = sum(d.profit for d in rec.decisions if d.profit is not None)
                assert rec.global_profit == pytest.approx(total, abs=1e-12)

            # motion sanity
            for prev, cur in zip(log.steps, log.steps[1:]):
                for za, zb in zip(prev.vehicle_zones, cur.vehicle_zones):
                    if za != zb:
                        assert zb in grid5.neighbors[za]
        ok(7, f"{total_steps} fuzzed steps over {episodes} episodes violate no invariant")


class TestCriterion8Schedules:
    def test_power_quarter_exact(self):
        sched = ScheduleState(
            step=625, total_steps=10_000, kappa_schedule=ScheduleSpec("power", 0.25)
        )
        assert abs(schedule_value("kappa", sched) - 0.5) < 1e-12

    def test_endpoints_and_monotonicity_all_kinds(self):
        specs = [
            ScheduleSpec("linear"),
            ScheduleSpec("power", 0.25),
            ScheduleSpec("power", 0.5),
            ScheduleSpec("power", 2.0),
            ScheduleSpec("jump", 0.25),
            ScheduleSpec("jump", 0.9),
        ]
        for spec in specs:
            sched = ScheduleState(step=0, total_steps=400, kappa_schedule=spec)
            assert schedule_value("kappa", sched) == 0.0
            values = []
            for step in range(401):
                sched.step = step
                values.append(schedule_value("kappa", sched))
            assert values[-1] == 1.0
            assert all(b >= a for a, b in zip(values, values[1:]))
        ok(8, "all schedule kinds: endpoints, monotonicity, power(0.25) value exact")


# -- desk-scale quantitative trends (hours of training; `pytest -m trend`) ----


@pytest.mark.trend
class TestCriterion9LRABeatsGreedy:
    def test_lra_beats_greedy(self):
        import trend_harness as th

        greedy = th.greedy_test_profits()
        greedy_mean = float(np.mean(list(greedy.values())))
        means = []
        for seed in th.SEEDS:
            th.ensure_run("LRA", seed)
            means.append(th.load_results("LRA", seed)["mean_test_profit"])
        lra_mean = float(np.mean(means))
        print(f"\nLRA mean test profit {lra_mean:.3f} vs greedy {greedy_mean:.3f} "
              f"({100 * (lra_mean / greedy_mean - 1):+.2f}%)")
        assert lra_mean > greedy_mean
        ok(9, "LRA (200k steps, 3 seeds, 12 test streams) beats greedy")


@pytest.mark.trend
class TestCriterion10ScdMatchesLraAndConverges:
    def test_scd_within_one_percent_and_convergence(self):
        import trend_harness as th

        lra_means, scd_means = [], []
        for seed in th.SEEDS:
            th.ensure_run("LRA", seed)
            th.ensure_run("COMAscd", seed)
            th.ensure_run("COMAadj", seed)
            lra_means.append(th.load_results("LRA", seed)["mean_test_profit"])
            scd_means.append(th.load_results("COMAscd", seed)["mean_test_profit"])
        lra = float(np.mean(lra_means))
        scd = float(np.mean(scd_means))
        print(f"\nCOMAscd mean {scd:.3f} vs LRA mean {lra:.3f} "
              f"({100 * (scd / lra - 1):+.2f}%)")
        assert scd >= lra * 0.99
        for algorithm in ("COMAscd", "COMAadj"):
            for seed in th.SEEDS:
                curve = th.validation_curve(algorithm, seed)
                assert th.converged(curve), f"{algorithm} seed {seed} did not converge"
        ok(10, "COMAscd >= LRA - 1%; COMAscd and COMAadj converge on all seeds")


@pytest.mark.trend
class TestCriterion11CrowdingGapPositive:
    def test_rejection_gap_sign(self):
        import trend_harness as th

        logs = []
        for seed in th.SEEDS:
            run = th.ensure_run("COMAscd", seed)
            logs.extend(th.evaluate_logs(run / "best.npz", "COMAscd"))
        rates = rejection_breakdown(logs)
        assert rates.crowded_destination is not None and rates.empty_destination is not None
        gap = rates.crowding_gap
        print(f"\ncrowding gap (crowded - empty rejection rate): {100 * gap:+.2f}pp "
              f"(empty {100 * rates.empty_destination:.1f}%, "
              f"crowded {100 * rates.crowded_destination:.1f}%)")
        assert gap > 0
        ok(11, "COMAscd rejects crowded-destination requests more than empty ones")
