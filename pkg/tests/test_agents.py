"""Explore-Then-Commit agents: schedules, estimation, committed play, and the
doubling wrapper."""

import math

import numpy as np
import pytest

from seqtest.agents import (
    EtcConfig,
    _estimate_gaussian,
    discrete_exploration_episodes,
    doubling_batches,
    gaussian_exploration_episodes,
    run_doubling,
    run_etc_discrete,
    run_etc_doubling,
    run_etc_gaussian,
)
from seqtest.dp import QuadratureSpec
from seqtest.envs import DiscreteEnvironment, GaussianEnvironment
from seqtest.generators import gen_discrete_pareto, gen_lower_bound_single
from seqtest.models import (
    DiscreteOutcomeModel,
    GaussianOutcomeModel,
    ProblemInstance,
    RewardSpec,
)


def gaussian_1d_instance(cost=0.3, var=1.0, mean=0.0, decisions=(-1.0, 1.0)):
    return ProblemInstance(
        model=GaussianOutcomeModel(mean=np.array([mean]), covariance=np.array([[var]])),
        costs=np.array([cost]),
        decisions=tuple((y,) for y in decisions),
        reward=RewardSpec(kind="quadratic"),
    )


class TestSchedules:
    def test_discrete_schedule_exact_powers(self):
        cfg = EtcConfig(horizon=512, support_size_hint=8)
        assert discrete_exploration_episodes(cfg) == 128  # floor(2 * 64)

    def test_discrete_schedule_d8_pareto_scale(self):
        cfg = EtcConfig(horizon=2**14, support_size_hint=256)
        assert discrete_exploration_episodes(cfg) == 4096  # cbrt(2^8 * 2^28)

    def test_gaussian_schedule_exact_powers(self):
        cfg = EtcConfig(horizon=1000, condition_number=3.0)
        assert gaussian_exploration_episodes(cfg) == 900  # floor(9 * 100)

    def test_clamped_to_horizon(self):
        cfg = EtcConfig(horizon=5, support_size_hint=1000)
        assert discrete_exploration_episodes(cfg) == 5

    def test_override(self):
        cfg = EtcConfig(horizon=100, support_size_hint=8, override_n=17)
        assert discrete_exploration_episodes(cfg) == 17


class TestDoubling:
    def test_exact_dyadic_sum(self):
        assert doubling_batches(7) == [1, 2, 4]

    def test_truncated_final_batch(self):
        assert doubling_batches(10) == [1, 2, 4, 3]

    def test_trace_length_always_total(self):
        inst = gen_lower_bound_single(0.2, 1)
        for total in (1, 5, 23, 64):
            env = DiscreteEnvironment(inst, seed=3)
            res = run_etc_doubling(env, EtcConfig(horizon=total, support_size_hint=2))
            assert res.trace.episodes == total
            # cumulative regret re-accumulates across batches
            np.testing.assert_allclose(
                res.trace.cumulative_regret,
                np.cumsum(res.trace.simple_regret),
                atol=1e-9,
            )

    def test_no_state_across_batches(self):
        # each batch re-explores: batch starts are explore episodes
        inst = gen_lower_bound_single(0.2, 1)
        env = DiscreteEnvironment(inst, seed=0)
        res = run_etc_doubling(env, EtcConfig(horizon=15, support_size_hint=2))
        starts = [0, 1, 3, 7]
        for s in starts:
            assert res.trace.phase[s] == "explore"


class TestEtcDiscrete:
    def test_point_mass_environment(self):
        inst = ProblemInstance(
            model=DiscreteOutcomeModel(support=np.array([[1.0, 0.0]]), probs=np.array([1.0])),
            costs=np.array([0.2, 0.2]),
            decisions=((1.0, 0.0), (0.0, 0.0)),
            reward=RewardSpec(kind="indicator-match"),
        )
        env = DiscreteEnvironment(inst, seed=0)
        res = run_etc_discrete(env, EtcConfig(horizon=50, support_size_hint=1))
        assert res.policy.table.root_action == ("decide", 0)
        commit = np.array([p == "commit" for p in res.trace.phase])
        assert np.all(res.trace.tests_performed[commit] == 0)
        np.testing.assert_allclose(res.trace.simple_regret[commit], 0.0, atol=1e-12)

    def test_single_test_commitment_rate(self):
        # eps=0.2, T=1000: the empirical majority side is 0 except on
        # Hoeffding-tail seeds; testing never beats 0.5 < 0.75
        inst = gen_lower_bound_single(0.2, 1)
        wrong = 0
        for seed in range(200):
            env = DiscreteEnvironment(inst, seed=seed)
            res = run_etc_discrete(env, EtcConfig(horizon=1000, support_size_hint=2))
            if res.policy.table.root_action != ("decide", 0):
                wrong += 1
        assert wrong / 200 < 0.05

    def test_exploration_purity_and_mar_pattern(self):
        inst = gen_discrete_pareto(d=4, seed=1, cost=0.05)
        env = DiscreteEnvironment(inst, seed=5)
        cfg = EtcConfig(horizon=300, support_size_hint=16)
        res = run_etc_discrete(env, cfg, collect_observations=True)
        n = res.trace.metadata["n_explore"]
        for t in range(n):
            assert len(res.trace.observations[t]) == inst.d  # no NA while exploring
        assert any(len(res.trace.observations[t]) < inst.d for t in range(n, 300))

    def test_commit_immutability(self):
        inst = gen_discrete_pareto(d=4, seed=1, cost=0.05)
        env = DiscreteEnvironment(inst, seed=5)
        res = run_etc_discrete(env, EtcConfig(horizon=300, support_size_hint=16))
        key = res.policy.root_key
        actions = {res.policy.action(key) for _ in range(10)}
        assert len(actions) == 1

    def test_empirical_pmf_properties(self):
        inst = gen_discrete_pareto(d=4, seed=2, cost=0.05)
        env = DiscreteEnvironment(inst, seed=9)
        res = run_etc_discrete(env, EtcConfig(horizon=200, support_size_hint=16))
        emp = res.empirical
        model = emp.to_outcome_model()
        assert abs(model.probs.sum() - 1.0) <= 1e-12
        true_rows = {tuple(r) for r in inst.model.support.tolist()}
        assert all(tuple(r) in true_rows for r in model.support.tolist())
        assert emp.episodes == res.trace.metadata["n_explore"]

    def test_explore_regret_single_test_values(self):
        # rolled out by hand: exploring costs 3/4 and decides correctly, the
        # clairvoyant skips and predicts 0, so per-episode regret is 0.75 on
        # x=0 and -0.25 on x=1
        inst = gen_lower_bound_single(0.2, 1)
        env = DiscreteEnvironment(inst, seed=11)
        res = run_etc_discrete(env, EtcConfig(horizon=50, support_size_hint=2))
        n = res.trace.metadata["n_explore"]
        explore_regret = set(np.round(res.trace.simple_regret[:n], 10))
        assert explore_regret <= {0.75, -0.25}


class TestEtcGaussian:
    def test_schedule_and_phases(self):
        inst = gaussian_1d_instance()
        env = GaussianEnvironment(inst, seed=0)
        cfg = EtcConfig(horizon=1000, condition_number=1.0, assume_zero_mean=True)
        res = run_etc_gaussian(env, cfg)
        assert res.trace.metadata["schedule_n"] == 100
        assert res.trace.phase[99] == "explore" and res.trace.phase[100] == "commit"
        assert res.trace.metadata["estimator"] == "uncentered"

    def test_committed_choice_matches_clairvoyant(self):
        # testing beats deciding by ~1.3 here, far beyond estimation error at
        # N = 464, so the committed test/skip choice matches the clairvoyant's
        inst = gaussian_1d_instance(cost=0.3, var=1.0, mean=0.0)
        cfg = EtcConfig(
            horizon=10_000,
            condition_number=1.0,
            assume_zero_mean=True,
            quadrature=QuadratureSpec(nodes_per_test=16, max_depth=1),
        )
        match = 0
        for seed in range(200):
            env = GaussianEnvironment(inst, seed=seed)
            clair_kind = env.clairvoyant_policy(cfg.quadrature).root_action[0]
            res = run_etc_gaussian(env, cfg)
            if res.policy is not None and res.policy.root_action[0] == clair_kind:
                match += 1
        assert match / 200 >= 0.95

    def test_zero_mean_estimator_tail_bound(self):
        # ||mu_hat|| <= 3 sqrt(lam_max d / N) on >= 99% of seeds
        cov = np.array([[2.0, 0.5, 0.0], [0.5, 1.5, 0.3], [0.0, 0.3, 1.0]])
        model = GaussianOutcomeModel(mean=np.zeros(3), covariance=cov)
        inst = ProblemInstance(
            model=model,
            costs=np.full(3, 0.1),
            decisions=((0.0, 0.0, 0.0),),
            reward=RewardSpec(kind="quadratic"),
        )
        lam_max = float(np.linalg.eigvalsh(cov)[-1])
        n = 900
        bound = 3.0 * math.sqrt(lam_max * 3 / n)
        hits = 0
        for seed in range(100):
            env = GaussianEnvironment(inst, seed=seed)
            est = _estimate_gaussian(env.outcomes(n), assume_zero_mean=True)
            hits += float(np.linalg.norm(est.mean)) <= bound
        assert hits >= 99

    def test_grace_extension_then_success(self):
        # centered covariance is singular at n=1; one extra exploration
        # episode (the 2N cap) makes it positive definite
        inst = gaussian_1d_instance()
        env = GaussianEnvironment(inst, seed=4)
        cfg = EtcConfig(horizon=50, condition_number=1.0, override_n=1)
        res = run_etc_gaussian(env, cfg)
        assert res.trace.metadata["n_explore"] == 2
        assert res.trace.metadata["estimator"] == "centered"
        assert not res.trace.metadata["estimation_failure"]

    def test_estimation_failure_falls_back_to_full_testing(self):
        # d=2 centered covariance has rank <= 1 at n <= 2 = 2N, so the run
        # records an estimation failure and tests everything afterwards
        inst = ProblemInstance(
            model=GaussianOutcomeModel(mean=np.zeros(2), covariance=np.eye(2)),
            costs=np.array([0.1, 0.1]),
            decisions=((0.0, 0.0), (1.0, 1.0)),
            reward=RewardSpec(kind="quadratic"),
        )
        env = GaussianEnvironment(inst, seed=4)
        cfg = EtcConfig(horizon=20, condition_number=1.0, override_n=1)
        res = run_etc_gaussian(env, cfg)
        assert res.trace.metadata["estimation_failure"]
        assert res.policy is None
        assert np.all(res.trace.tests_performed == 2)

    def test_centered_estimator_used_for_nonzero_mean(self):
        inst = gaussian_1d_instance(mean=5.0)
        env = GaussianEnvironment(inst, seed=1)
        res = run_etc_gaussian(env, EtcConfig(horizon=200, condition_number=1.0))
        assert res.trace.metadata["estimator"] == "centered"
        # uncentered second moment would be ~ 26, the centered one ~ 1
        assert res.empirical.covariance[0, 0] < 5.0


class TestDoublingVsKnownT:
    def test_same_episode_stream(self):
        # the doubling wrapper consumes the same outcome stream, so the two
        # agents are compared on identical draws
        inst = gen_lower_bound_single(0.2, 1)
        known = run_etc_discrete(
            DiscreteEnvironment(inst, seed=7), EtcConfig(horizon=64, support_size_hint=2)
        ).trace
        doubled = run_etc_doubling(
            DiscreteEnvironment(inst, seed=7), EtcConfig(horizon=64, support_size_hint=2)
        ).trace
        np.testing.assert_array_equal(known.clairvoyant_reward, doubled.clairvoyant_reward)

    def test_run_doubling_generic_factory(self):
        calls = []

        def factory(batch):
            calls.append(batch)
            inst = gen_lower_bound_single(0.2, 1)
            env = DiscreteEnvironment(inst, seed=len(calls))
            return run_etc_discrete(env, EtcConfig(horizon=batch, support_size_hint=2)).trace

        trace = run_doubling(factory, 11)
        assert calls == [1, 2, 4, 4]
        assert trace.episodes == 11
