"""Explore-Then-Commit agents and the doubling-trick wrapper.

Both agents explore by performing every test for the first N episodes (so the
logged exploration data has no missingness and the plug-in estimates are
unbiased), then solve the clairvoyant DP on the estimated model and play the
resulting policy to the horizon. The schedule is N = floor(|P|^(1/3) T^(2/3))
for discrete outcome models and N = floor(sigma^2 T^(2/3)) for Gaussian ones,
clamped to [1, T].

The doubling wrapper restarts a fresh known-horizon agent on episode batches
of length 2^0, 2^1, 2^2, ... (final batch truncated), carrying no state across
batches, which turns the fixed-horizon agent into an anytime one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .dp import (
    QuadratureSpec,
    _reward_table,
    rollout_net_reward,
    solve_dp_discrete,
    solve_dp_gaussian,
)
from .envs import (
    DiscreteEnvironment,
    GaussianEnvironment,
    RegretTrace,
    concatenate_traces,
    decision_label,
)
from .models import (
    DiscreteOutcomeModel,
    GaussianOutcomeModel,
    InstanceError,
    ProblemInstance,
    RewardSpec,
    instance_hash,
)


@dataclass(frozen=True)
class EtcConfig:
    """Explore-Then-Commit schedule parameters.

    ``support_size_hint`` feeds the discrete schedule (the |P| the formula
    assumes known); ``condition_number`` feeds the Gaussian one. ``override_n``
    replaces the derived N (still clamped to [1, T]).
    """

    horizon: int
    support_size_hint: Optional[int] = None
    condition_number: Optional[float] = None
    override_n: Optional[int] = None
    assume_zero_mean: bool = False
    quadrature: QuadratureSpec = QuadratureSpec()
    state_cap: int = 10**7

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


def _int_cbrt(x: int) -> int:
    """Largest n with n^3 <= x (float pow under-floors exact powers)."""
    n = int(round(x ** (1.0 / 3.0)))
    while n > 0 and n**3 > x:
        n -= 1
    while (n + 1) ** 3 <= x:
        n += 1
    return n


def discrete_exploration_episodes(config: EtcConfig) -> int:
    if config.override_n is not None:
        return min(max(int(config.override_n), 1), config.horizon)
    if config.support_size_hint is None:
        raise ValueError("the discrete ETC schedule requires support_size_hint (|P|)")
    n = _int_cbrt(int(config.support_size_hint) * config.horizon**2)
    return min(max(n, 1), config.horizon)


def gaussian_exploration_episodes(config: EtcConfig) -> int:
    if config.override_n is not None:
        return min(max(int(config.override_n), 1), config.horizon)
    if config.condition_number is None:
        raise ValueError("the Gaussian ETC schedule requires condition_number (sigma)")
    sigma = float(config.condition_number)
    n = int(math.floor(sigma * sigma * float(np.cbrt(float(config.horizon) ** 2))))
    return min(max(n, 1), config.horizon)


# ---------------------------------------------------------------------------
# Empirical models
# ---------------------------------------------------------------------------


@dataclass
class EmpiricalModel:
    """Plug-in estimate built from fully observed exploration episodes."""

    vectors: np.ndarray  # distinct observed outcome vectors, lexicographic
    counts: np.ndarray

    @property
    def episodes(self) -> int:
        return int(self.counts.sum())

    def to_outcome_model(self) -> DiscreteOutcomeModel:
        return DiscreteOutcomeModel(
            support=self.vectors, probs=self.counts / self.counts.sum()
        )


@dataclass
class GaussianEstimate:
    mean: np.ndarray
    covariance: np.ndarray
    estimator: str  # "uncentered" (paper's formula) or "centered"
    episodes: int


def _empirical_discrete(vectors: np.ndarray) -> EmpiricalModel:
    uniq, counts = np.unique(vectors, axis=0, return_counts=True)
    return EmpiricalModel(vectors=uniq, counts=counts)


def _empirical_instance(instance: ProblemInstance, empirical: EmpiricalModel) -> ProblemInstance:
    """The agent-side instance: estimated model, true costs/decisions/reward."""
    model = empirical.to_outcome_model()
    reward = instance.reward
    if reward.kind == "table":
        # f is known a priori as a function; re-key its table to the
        # empirical support (every observed vector is a true support row)
        row_of = {tuple(r): k for k, r in enumerate(instance.model.support)}
        rows = [reward.table[row_of[tuple(v)]] for v in empirical.vectors]
        reward = RewardSpec(kind="table", table=np.array(rows))
    return ProblemInstance(
        model=model, costs=instance.costs, decisions=instance.decisions, reward=reward
    )


def _greedy_decisions(instance: ProblemInstance) -> np.ndarray:
    """argmax_y f(x_k, y) per support point (ties to the lowest index)."""
    model = instance.model
    table = _reward_table(instance)
    if table is not None:
        return np.argmax(table, axis=1)
    dec_index = {y: j for j, y in enumerate(instance.decisions)}
    out = np.zeros(model.support_size, dtype=int)
    for k in range(model.support_size):
        out[k] = dec_index.get(tuple(model.support[k]), 0)
    return out


@dataclass
class EtcRunResult:
    trace: RegretTrace
    policy: object  # committed policy; None when the run never committed
    empirical: object
    metadata: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Discrete ETC
# ---------------------------------------------------------------------------


def run_etc_discrete(
    env: DiscreteEnvironment,
    config: EtcConfig,
    collect_observations: bool = False,
) -> EtcRunResult:
    """Algorithm: explore N episodes doing every test, build the empirical
    pmf over observed complete vectors, commit to the DP policy on it."""
    instance = env.instance
    model = instance.model
    T = config.horizon
    n_explore = discrete_exploration_episodes(config)
    idx = env.outcome_indices(T)
    _, _, clair_net = env.clairvoyant()

    total_cost = float(instance.costs.sum())
    greedy = _greedy_decisions(instance)
    explore_net = np.array(
        [
            instance.reward_value(model.support[k], int(greedy[k]), support_index=k)
            for k in range(model.support_size)
        ]
    ) - total_cost

    policy = None
    empirical = None
    commit_net = commit_tests = commit_dec = None
    commit_rolls = None
    fallback_count = 0
    if n_explore < T:
        empirical = _empirical_discrete(model.support[idx[:n_explore]])
        emp_instance = _empirical_instance(instance, empirical)
        policy, _ = solve_dp_discrete(emp_instance, state_cap=config.state_cap)
        commit_net = np.empty(model.support_size)
        commit_tests = np.zeros(model.support_size, dtype=int)
        commit_dec = np.zeros(model.support_size, dtype=int)
        commit_rolls = []
        for k in range(model.support_size):
            roll = policy.trace(model.support[k], on_missing="fallback")
            commit_rolls.append(roll)
            commit_net[k] = rollout_net_reward(
                instance, model.support[k], roll, support_index=k
            )
            commit_tests[k] = len(roll.tests)
            commit_dec[k] = roll.decision
        commit_idx = idx[n_explore:]
        fallback_count = int(sum(commit_rolls[k].fallback for k in commit_idx))

    explore_mask = np.arange(T) < n_explore
    realized = np.where(
        explore_mask, explore_net[idx], commit_net[idx] if commit_net is not None else 0.0
    )
    tests_performed = np.where(
        explore_mask, model.d, commit_tests[idx] if commit_tests is not None else 0
    )
    decision_idx = np.where(
        explore_mask, greedy[idx], commit_dec[idx] if commit_dec is not None else 0
    )
    labels = [decision_label(instance, j) for j in range(len(instance.decisions))]
    decisions = [labels[j] for j in decision_idx]
    phase = ["explore" if m else "commit" for m in explore_mask]

    observations = None
    if collect_observations:
        observations = []
        all_tests = tuple(range(model.d))
        for t in range(T):
            k = int(idx[t])
            tests = all_tests if explore_mask[t] else commit_rolls[k].tests
            observations.append({i: float(model.support[k, i]) for i in tests})

    trace = RegretTrace(
        agent="etc-discrete",
        seed=env.seed,
        instance_hash=instance_hash(instance),
        phase=phase,
        tests_performed=tests_performed,
        decision=decisions,
        realized_reward=realized,
        clairvoyant_reward=clair_net[idx],
        observations=observations,
        metadata={"n_explore": n_explore, "fallback_episodes": fallback_count},
    )
    return EtcRunResult(trace=trace, policy=policy, empirical=empirical, metadata=trace.metadata)


# ---------------------------------------------------------------------------
# Gaussian ETC
# ---------------------------------------------------------------------------


def _estimate_gaussian(draws: np.ndarray, assume_zero_mean: bool) -> GaussianEstimate:
    n = draws.shape[0]
    mu = draws.mean(axis=0)
    second = draws.T @ draws / n
    if assume_zero_mean:
        cov = second
    else:
        cov = second - np.outer(mu, mu)
    cov = (cov + cov.T) / 2.0
    return GaussianEstimate(
        mean=mu,
        covariance=cov,
        estimator="uncentered" if assume_zero_mean else "centered",
        episodes=n,
    )


def _is_pd(matrix: np.ndarray) -> bool:
    try:
        return float(np.linalg.eigvalsh(matrix)[0]) > 0.0
    except np.linalg.LinAlgError:
        return False


def _gaussian_policy_rollouts(instance: ProblemInstance, policy, xs: np.ndarray):
    """(net reward, tests performed, decision index) arrays for many episodes.

    Fast path for d == 1 (the root action is shared by all episodes and the
    post-test decision has a closed form); generic rollout loop otherwise.
    """
    n = xs.shape[0]
    net = np.empty(n)
    tests = np.zeros(n, dtype=int)
    dec = np.zeros(n, dtype=int)
    if instance.d == 1 and instance.reward.kind == "quadratic":
        kind, which = policy.node(0, ())[1]
        ys = np.array([y[0] for y in instance.decisions])
        if kind == "decide":
            dec[:] = which
            net[:] = -((xs[:, 0] - ys[which]) ** 2)
            return net, tests, dec
        sq = (xs[:, 0][:, None] - ys[None, :]) ** 2
        dec = np.argmin(sq, axis=1)
        tests[:] = 1
        net = -sq[np.arange(n), dec] - float(instance.costs[0])
        return net, tests, dec
    for t in range(n):
        roll = policy.trace(xs[t], on_missing="error")
        net[t] = rollout_net_reward(instance, xs[t], roll)
        tests[t] = len(roll.tests)
        dec[t] = roll.decision
    return net, tests, dec


def run_etc_gaussian(
    env: GaussianEnvironment,
    config: EtcConfig,
    collect_observations: bool = False,
) -> EtcRunResult:
    """Gaussian ETC with the plug-in mean/second-moment estimator.

    If the estimated covariance is not positive definite at commit time,
    exploration is extended episode by episode up to 2N; past that the run
    records an estimation failure and tests everything for the remainder.
    """
    instance = env.instance
    if instance.reward.kind != "quadratic":
        raise InstanceError("run_etc_gaussian requires a quadratic-reward instance")
    T = config.horizon
    n0 = gaussian_exploration_episodes(config)
    xs = env.outcomes(T)
    clair = env.clairvoyant_policy(config.quadrature)

    estimate = None
    estimation_failure = False
    n_explore = n0
    while True:
        candidate = _estimate_gaussian(xs[:n_explore], config.assume_zero_mean)
        if _is_pd(candidate.covariance):
            estimate = candidate
            break
        if n_explore >= min(2 * n0, T):
            estimation_failure = True
            break
        n_explore += 1

    policy = None
    if estimate is not None and n_explore < T:
        emp_instance = ProblemInstance(
            model=GaussianOutcomeModel(mean=estimate.mean, covariance=estimate.covariance),
            costs=instance.costs,
            decisions=instance.decisions,
            reward=instance.reward,
        )
        policy, _ = solve_dp_gaussian(emp_instance, config.quadrature)

    dec_matrix = np.array([list(y) for y in instance.decisions])
    total_cost = float(instance.costs.sum())

    def full_test_rows(rows: np.ndarray):
        sq = ((rows[:, None, :] - dec_matrix[None, :, :]) ** 2).sum(axis=2)
        d_idx = np.argmin(sq, axis=1)
        nets = -sq[np.arange(rows.shape[0]), d_idx] - total_cost
        return nets, np.full(rows.shape[0], instance.d, dtype=int), d_idx

    realized = np.empty(T)
    tests_performed = np.empty(T, dtype=int)
    decision_idx = np.empty(T, dtype=int)
    exp_net, exp_tests, exp_dec = full_test_rows(xs[:n_explore])
    realized[:n_explore] = exp_net
    tests_performed[:n_explore] = exp_tests
    decision_idx[:n_explore] = exp_dec
    if n_explore < T:
        if policy is not None:
            c_net, c_tests, c_dec = _gaussian_policy_rollouts(instance, policy, xs[n_explore:])
        else:
            c_net, c_tests, c_dec = full_test_rows(xs[n_explore:])
        realized[n_explore:] = c_net
        tests_performed[n_explore:] = c_tests
        decision_idx[n_explore:] = c_dec

    clair_net, _, _ = _gaussian_policy_rollouts(instance, clair, xs)

    labels = [decision_label(instance, j) for j in range(len(instance.decisions))]
    decisions = [labels[j] for j in decision_idx]
    phase = ["explore" if t < n_explore else "commit" for t in range(T)]

    observations = None
    if collect_observations:
        observations = []
        for t in range(T):
            if t < n_explore or tests_performed[t] == instance.d:
                observations.append({i: float(xs[t, i]) for i in range(instance.d)})
            else:
                roll = policy.trace(xs[t], on_missing="error")
                observations.append({i: float(xs[t, i]) for i in roll.tests})

    metadata = {
        "n_explore": n_explore,
        "schedule_n": n0,
        "estimator": estimate.estimator if estimate is not None else None,
        "estimation_failure": estimation_failure,
    }
    trace = RegretTrace(
        agent="etc-gaussian",
        seed=env.seed,
        instance_hash=instance_hash(instance),
        phase=phase,
        tests_performed=tests_performed,
        decision=decisions,
        realized_reward=realized,
        clairvoyant_reward=clair_net,
        observations=observations,
        metadata=metadata,
    )
    return EtcRunResult(trace=trace, policy=policy, empirical=estimate, metadata=metadata)


# ---------------------------------------------------------------------------
# Doubling trick
# ---------------------------------------------------------------------------


def doubling_batches(total_T: int) -> list:
    """Batch lengths 1, 2, 4, ... truncated to sum exactly to total_T."""
    if total_T < 1:
        raise ValueError("total_T must be >= 1")
    batches = []
    width, remaining = 1, total_T
    while remaining > 0:
        b = min(width, remaining)
        batches.append(b)
        remaining -= b
        width *= 2
    return batches


def run_doubling(agent_factory: Callable[[int], RegretTrace], total_T: int) -> RegretTrace:
    """Run fresh fixed-horizon agents on dyadically growing batches.

    ``agent_factory(batch_T)`` must run one agent for ``batch_T`` episodes,
    consuming the shared environment stream, and return its trace. No state
    carries across batches.
    """
    traces = [agent_factory(b) for b in doubling_batches(total_T)]
    merged = concatenate_traces(traces)
    merged.agent = traces[0].agent + "-doubling"
    return merged


def run_etc_doubling(env, config: EtcConfig, collect_observations: bool = False) -> EtcRunResult:
    """Doubling-trick ETC on the same environment stream as known-T ETC."""
    runner = run_etc_discrete if isinstance(env, DiscreteEnvironment) else run_etc_gaussian

    def factory(batch_T: int) -> RegretTrace:
        batch_config = EtcConfig(
            horizon=batch_T,
            support_size_hint=config.support_size_hint,
            condition_number=config.condition_number,
            override_n=None,
            assume_zero_mean=config.assume_zero_mean,
            quadrature=config.quadrature,
            state_cap=config.state_cap,
        )
        return runner(env, batch_config, collect_observations).trace

    trace = run_doubling(factory, config.horizon)
    return EtcRunResult(trace=trace, policy=None, empirical=None, metadata=trace.metadata)
