"""Clairvoyant dynamic programming over partially observed test states.

Discrete instances are solved exactly by recursing forward from the all-missing
state and memoizing on the canonical state key: the set of support points
consistent with the observations so far. Two states with the same consistent
set induce the same posterior, hence the same value; tests whose outcome is
already determined by the consistent set are dominated (nonnegative cost, zero
information) and are excluded from the action max, which keeps every stored
best action legal regardless of which coordinates produced the key.

Gaussian instances are solved approximately on a scenario tree: each tested
coordinate's conditional law is discretized into Gauss-Hermite nodes of its 1-d
posterior marginal, and the returned policy re-runs the same backward induction
from whatever real-valued state it is queried at.

Tie-breaking everywhere: a decision beats an equal-valued test, lower test
index beats higher, lower decision index beats higher. Value comparisons are
exact float comparisons; the tie rules make results deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .models import (
    DiscreteOutcomeModel,
    GaussianOutcomeModel,
    InstanceError,
    ProblemInstance,
    ScalarPmf,
    TestState,
    apply_observation,
    consistent_support_indices,
    marginal_over_test,
    posterior_gaussian,
)

# action = ("test", test_index) or ("decide", decision_index)
Action = Tuple[str, int]


class StateSpaceError(RuntimeError):
    """The number of canonical states exceeded the configured cap."""


class QuadratureCapError(ValueError):
    """Scenario-tree depth/width cap exceeded."""


class PolicyUndefinedError(RuntimeError):
    """A rollout reached a state the policy's model cannot represent."""


@dataclass
class ValueTable:
    """Memoized value function: canonical state key -> (value, best action)."""

    entries: dict
    root_key: object

    @property
    def root_value(self) -> float:
        return self.entries[self.root_key][0]

    @property
    def root_action(self) -> Action:
        return self.entries[self.root_key][1]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class Rollout:
    """One policy rollout on a realized outcome vector."""

    tests: tuple
    decision: int
    fallback: bool = False


@dataclass(frozen=True)
class PolicyValue:
    value: float
    stderr: float = 0.0


@dataclass(frozen=True)
class QuadratureSpec:
    """Gauss-Hermite discretization parameters for the Gaussian DP."""

    nodes_per_test: int = 16
    max_depth: int = 6

    def __post_init__(self):
        if self.nodes_per_test < 1:
            raise QuadratureCapError("nodes_per_test must be >= 1")
        if self.max_depth < 1:
            raise QuadratureCapError("max_depth must be >= 1")


def _bits(mask: int) -> list:
    out = []
    while mask:
        lsb = mask & -mask
        out.append(lsb.bit_length() - 1)
        mask ^= lsb
    return out


def _reward_table(instance: ProblemInstance) -> Optional[np.ndarray]:
    """Materialize a (K, |Y|) reward matrix for discrete table/quadratic kinds."""
    kind = instance.reward.kind
    if kind == "table":
        return instance.reward.table
    if kind == "quadratic":
        support = instance.model.support
        dec = np.array([list(y) for y in instance.decisions], dtype=float)
        diff = support[:, None, :] - dec[None, :, :]
        return -np.einsum("kjd,kjd->kj", diff, diff)
    return None


# ---------------------------------------------------------------------------
# Discrete DP
# ---------------------------------------------------------------------------


class DiscretePolicy:
    """Deterministic policy over canonical discrete states.

    States are keyed by the bitmask (over the policy model's support indices)
    of points consistent with the observations so far. ``trace`` rolls the
    policy out on a realized outcome vector; when an observed value is
    impossible under the policy's model the rollout falls back to the best
    decision at the deepest consistent state.
    """

    def __init__(self, instance: ProblemInstance, table: ValueTable, value_masks: list):
        self.instance = instance
        self.table = table
        self._value_masks = value_masks  # per test: {float value -> bitmask}

    @property
    def root_key(self) -> int:
        return self.table.root_key

    def action(self, key: int) -> Action:
        return self.table.entries[key][1]

    def value(self, key: int) -> float:
        return self.table.entries[key][0]

    def fallback_decision(self, key: int) -> int:
        return self.table.entries[key][2]

    def key_for_state(self, s: TestState) -> int:
        idx = consistent_support_indices(self.instance.model, s)
        key = 0
        for k in idx:
            key |= 1 << int(k)
        return key

    def action_for_state(self, s: TestState) -> Action:
        return self.action(self.key_for_state(s))

    def advance(self, key: int, test: int, value: float) -> int:
        """New key after observing ``value`` on ``test``; 0 if impossible."""
        return key & self._value_masks[test].get(float(value), 0)

    def trace(self, x: Sequence[float], on_missing: str = "fallback") -> Rollout:
        """Roll the policy out on outcome vector ``x``."""
        key = self.root_key
        tests = []
        while True:
            kind, which = self.action(key)
            if kind == "decide":
                return Rollout(tests=tuple(tests), decision=which)
            tests.append(which)
            child = self.advance(key, which, float(x[which]))
            if child == 0:
                if on_missing == "error":
                    raise PolicyUndefinedError(
                        f"observed value {x[which]!r} on test {which} is outside "
                        "the policy model's support"
                    )
                return Rollout(tests=tuple(tests), decision=self.fallback_decision(key), fallback=True)
            key = child


def _best_decision_discrete(instance, idxs, mass, table, indicator_decision):
    """(value, decision index) of the best immediate decision at a state.

    ``idxs`` ascending. Expectations are computed as (probs[idxs]/mass) dot
    table rows so that independent implementations of the same contraction
    agree bitwise.
    """
    probs = instance.model.probs
    if table is not None:
        idx_arr = np.asarray(idxs, dtype=np.intp)
        w = probs[idx_arr] / mass
        exp = w @ table[idx_arr]
        j = int(np.argmax(exp))
        return float(exp[j]), j
    # indicator-match: the best decision is the posterior mode among support
    # points that are actually in the decision set
    best_p = None
    best_j = None
    for k in idxs:
        j = indicator_decision[k]
        if j < 0:
            continue
        p = probs[k]
        if best_p is None or p > best_p or (p == best_p and j < best_j):
            best_p, best_j = p, j
    if best_j is None:
        return 0.0, 0
    return float(best_p / mass), best_j


def solve_dp_discrete(instance: ProblemInstance, state_cap: int = 10**7):
    """Exact optimal policy and value table for a discrete instance.

    Raises :class:`StateSpaceError` when the number of canonical states would
    exceed ``state_cap``.
    """
    model = instance.model
    if not isinstance(model, DiscreteOutcomeModel):
        raise InstanceError("solve_dp_discrete requires a discrete model")
    support, probs = model.support, model.probs
    K, d = model.support_size, model.d
    costs = instance.costs
    table = _reward_table(instance)
    indicator_decision = None
    if instance.reward.kind == "indicator-match":
        dec_index = {y: j for j, y in enumerate(instance.decisions)}
        indicator_decision = [dec_index.get(tuple(support[k]), -1) for k in range(K)]
    elif table is None:
        raise InstanceError(
            f"reward kind {instance.reward.kind!r} is not supported by the discrete DP"
        )

    # per (test, value) consistency masks over support indices
    value_masks = []
    for i in range(d):
        masks: dict = {}
        col = support[:, i]
        for k in range(K):
            v = float(col[k])
            masks[v] = masks.get(v, 0) | (1 << k)
        value_masks.append(masks)
    test_values = [sorted(m) for m in value_masks]

    memo: dict = {}
    mass_memo: dict = {}

    def mass_of(mask: int) -> float:
        m = mass_memo.get(mask)
        if m is None:
            m = 0.0
            for k in _bits(mask):
                m += probs[k]
            mass_memo[mask] = m
        return m

    def solve(mask: int) -> float:
        entry = memo.get(mask)
        if entry is not None:
            return entry[0]
        if len(memo) >= state_cap:
            raise StateSpaceError(
                f"state-space blowup guard: more than {state_cap} canonical states"
            )
        idxs = _bits(mask)
        mass_s = mass_of(mask)
        dec_val, dec_j = _best_decision_discrete(
            instance, idxs, mass_s, table, indicator_decision
        )
        best_val, best_act = dec_val, ("decide", dec_j)
        for i in range(d):
            children = []
            for v in test_values[i]:
                child = mask & value_masks[i][v]
                if child:
                    children.append(child)
            if len(children) == 1 and children[0] == mask:
                continue  # coordinate already determined by the consistent set
            q = -costs[i]
            for child in children:
                q += (mass_of(child) / mass_s) * solve(child)
            if q > best_val:
                best_val, best_act = q, ("test", i)
        memo[mask] = (best_val, best_act, dec_j)
        return best_val

    root = (1 << K) - 1
    solve(root)
    vtable = ValueTable(entries=memo, root_key=root)
    return DiscretePolicy(instance, vtable, value_masks), vtable


def policy_records(policy: DiscretePolicy) -> list:
    """JSON-ready policy dump: one record per canonical discrete state."""
    records = []
    for mask in sorted(policy.table.entries):
        value, (kind, which), _ = policy.table.entries[mask]
        records.append(
            {
                "state_key": "|".join(str(k) for k in _bits(mask)),
                "action": f"{kind}:{which}",
                "value": value,
            }
        )
    return records


# ---------------------------------------------------------------------------
# Public one-step operations
# ---------------------------------------------------------------------------


def q_value(
    instance: ProblemInstance,
    s: TestState,
    test: int,
    value_lookup: Callable[[TestState], float],
    nodes_per_test: int = 16,
) -> float:
    """Expected remaining reward for performing ``test`` at state ``s``:
    -c_test plus the posterior-weighted value of the successor states."""
    if s.entries[test] is not None:
        raise ValueError(f"test {test} is already observed")
    marg = marginal_over_test(instance.model, s, test)
    q = -float(instance.costs[test])
    if isinstance(marg, ScalarPmf):
        for v, p in zip(marg.values, marg.probs):
            q += p * value_lookup(apply_observation(s, test, v))
        return q
    nodes, weights = _gauss_hermite(nodes_per_test)
    scale = math.sqrt(2.0 * marg.variance)
    for h, w in zip(nodes, weights):
        q += w * value_lookup(apply_observation(s, test, marg.mean + scale * h))
    return q


def _gaussian_decision_values(instance: ProblemInstance, s: TestState) -> np.ndarray:
    """Closed-form E[f(x, y) | s] per decision for Gaussian models."""
    if instance.reward.kind != "quadratic":
        raise InstanceError(
            f"reward kind {instance.reward.kind!r} has no closed form for "
            "Gaussian models (only 'quadratic' is supported)"
        )
    dec = np.array([list(y) for y in instance.decisions], dtype=float)
    obs = list(s.observed_indices)
    miss = list(s.missing_indices)
    total = np.zeros(len(dec))
    if obs:
        values = np.array([s.entries[i] for i in obs])
        total += ((values[None, :] - dec[:, obs]) ** 2).sum(axis=1)
    if miss:
        post = posterior_gaussian(instance.model, s)
        total += ((post.mean[None, :] - dec[:, miss]) ** 2).sum(axis=1)
        total += float(np.trace(post.covariance))
    return -total


def decision_reward(instance: ProblemInstance, s: TestState, decision_index: int) -> float:
    """Expected reward of deciding ``decision_index`` at state ``s``."""
    if s.terminal:
        raise ValueError("cannot decide in the terminal state")
    model = instance.model
    if isinstance(model, DiscreteOutcomeModel):
        idxs = [int(k) for k in consistent_support_indices(model, s)]
        if not idxs:
            raise InstanceError("no support point is consistent with the state")
        mass = 0.0
        for k in idxs:
            mass += model.probs[k]
        table = _reward_table(instance)
        if table is not None:
            idx_arr = np.asarray(idxs, dtype=np.intp)
            w = model.probs[idx_arr] / mass
            return float(w @ table[idx_arr, decision_index])
        y = instance.decisions[decision_index]
        p = 0.0
        for k in idxs:
            if tuple(model.support[k]) == y:
                p += model.probs[k]
        return p / mass
    return float(_gaussian_decision_values(instance, s)[decision_index])


# ---------------------------------------------------------------------------
# Gaussian scenario-tree DP
# ---------------------------------------------------------------------------


def _gauss_hermite(n: int):
    """Probabilist-normalized Gauss-Hermite nodes and weights (sum to 1)."""
    nodes, weights = np.polynomial.hermite.hermgauss(n)
    return nodes, weights / math.sqrt(math.pi)


class GaussianTreePolicy:
    """Backward-induction policy on a Gauss-Hermite scenario tree.

    The policy is evaluable at arbitrary real observations: querying an action
    recomputes the induction from the queried state as the root, so committed
    agents can follow it on outcomes that never coincide with tree nodes.
    """

    def __init__(self, instance: ProblemInstance, quadrature: QuadratureSpec):
        if not isinstance(instance.model, GaussianOutcomeModel):
            raise InstanceError("GaussianTreePolicy requires a Gaussian model")
        if instance.d > quadrature.max_depth:
            raise QuadratureCapError(
                f"dimension {instance.d} exceeds max_depth {quadrature.max_depth}"
            )
        self.instance = instance
        self.quadrature = quadrature
        self._nodes, self._weights = _gauss_hermite(quadrature.nodes_per_test)
        self._memo: dict = {}

    def _state(self, obs_mask: int, obs_values: tuple) -> TestState:
        entries = [None] * self.instance.d
        for pos, i in enumerate(_bits(obs_mask)):
            entries[i] = obs_values[pos]
        return TestState(entries=tuple(entries))

    def node(self, obs_mask: int, obs_values: tuple):
        """(value, action, best decision) at a (possibly off-tree) state."""
        key = (obs_mask, obs_values)
        entry = self._memo.get(key)
        if entry is not None:
            return entry
        s = self._state(obs_mask, obs_values)
        dec_values = _gaussian_decision_values(self.instance, s)
        dec_j = int(np.argmax(dec_values))
        best_val, best_act = float(dec_values[dec_j]), ("decide", dec_j)
        miss = s.missing_indices
        if miss:
            post = posterior_gaussian(self.instance.model, s)
            for pos, i in enumerate(miss):
                mean_i = float(post.mean[pos])
                scale = math.sqrt(2.0 * float(post.covariance[pos, pos]))
                rank = _bits(obs_mask | (1 << i)).index(i)
                q = -float(self.instance.costs[i])
                for h, w in zip(self._nodes, self._weights):
                    child_values = obs_values[:rank] + (mean_i + scale * h,) + obs_values[rank:]
                    q += w * self.node(obs_mask | (1 << i), child_values)[0]
                if q > best_val:
                    best_val, best_act = q, ("test", i)
        entry = (best_val, best_act, dec_j)
        self._memo[key] = entry
        return entry

    @property
    def root_value(self) -> float:
        return self.node(0, ())[0]

    @property
    def root_action(self) -> Action:
        return self.node(0, ())[1]

    def action_for_state(self, s: TestState) -> Action:
        obs = s.observed_indices
        mask = 0
        for i in obs:
            mask |= 1 << i
        return self.node(mask, tuple(float(s.entries[i]) for i in obs))[1]

    def trace(self, x: Sequence[float], on_missing: str = "fallback") -> Rollout:
        mask, values = 0, ()
        tests = []
        while True:
            _, (kind, which), _ = self.node(mask, values)
            if kind == "decide":
                return Rollout(tests=tuple(tests), decision=which)
            tests.append(which)
            rank = _bits(mask | (1 << which)).index(which)
            values = values[:rank] + (float(x[which]),) + values[rank:]
            mask |= 1 << which


def solve_dp_gaussian(instance: ProblemInstance, quadrature: Optional[QuadratureSpec] = None):
    """Approximate optimal policy for a Gaussian instance via the scenario tree."""
    quadrature = quadrature or QuadratureSpec()
    policy = GaussianTreePolicy(instance, quadrature)
    policy.node(0, ())  # force full tree evaluation
    table = ValueTable(entries=policy._memo, root_key=(0, ()))
    return policy, table


# ---------------------------------------------------------------------------
# Policy evaluation
# ---------------------------------------------------------------------------


def rollout_net_reward(instance: ProblemInstance, x, rollout: Rollout, support_index=None) -> float:
    """Realized episode reward f(x, y) minus the costs of the tests performed."""
    test_cost = 0.0
    for i in rollout.tests:
        test_cost += float(instance.costs[i])
    return instance.reward_value(x, rollout.decision, support_index=support_index) - test_cost


def evaluate_policy(
    instance: ProblemInstance,
    policy,
    mc_episodes: int = 4096,
    rng: Optional[np.random.Generator] = None,
) -> PolicyValue:
    """Expected episode reward of a policy: exact support enumeration for
    discrete instances, Monte Carlo with a reported standard error otherwise."""
    if instance.is_discrete:
        model = instance.model
        total = 0.0
        for k in range(model.support_size):
            roll = policy.trace(model.support[k], on_missing="error")
            total += model.probs[k] * rollout_net_reward(
                instance, model.support[k], roll, support_index=k
            )
        return PolicyValue(value=float(total), stderr=0.0)
    if rng is None:
        rng = np.random.default_rng(0)
    chol = np.linalg.cholesky(instance.model.covariance)
    draws = rng.standard_normal((mc_episodes, instance.d)) @ chol.T + instance.model.mean
    rewards = np.empty(mc_episodes)
    for t in range(mc_episodes):
        roll = policy.trace(draws[t], on_missing="error")
        rewards[t] = rollout_net_reward(instance, draws[t], roll)
    return PolicyValue(
        value=float(rewards.mean()),
        stderr=float(rewards.std(ddof=1) / math.sqrt(mc_episodes)),
    )
