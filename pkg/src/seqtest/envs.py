"""Simulation environments, regret accounting, and trace serialization.

Each environment owns a counter-based Philox stream keyed by its seed, so a
replication's draws depend only on (seed, episode index) and are reproducible
under any parallel schedule. Draws are consumed sequentially: an anytime
wrapper that runs agents batch by batch sees exactly the same outcome sequence
as a known-horizon agent, which makes cross-agent comparisons paired.

Per-episode simple regret follows the clairvoyant-gap definition: both the
agent and the clairvoyant policy are rolled out on the same realized outcome
vector, and the regret is the difference of their net rewards (reward minus
test costs). It can be negative on a single episode.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dp import (
    QuadratureSpec,
    Rollout,
    rollout_net_reward,
    solve_dp_discrete,
    solve_dp_gaussian,
)
from .models import (
    DiscreteOutcomeModel,
    GaussianOutcomeModel,
    ProblemInstance,
    instance_hash,
    sample_support_indices,
)


def _stream(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed)))


class DiscreteEnvironment:
    """Serves i.i.d. outcomes from a discrete instance and answers
    clairvoyant-policy queries about it."""

    def __init__(self, instance: ProblemInstance, seed: int):
        if not isinstance(instance.model, DiscreteOutcomeModel):
            raise ValueError("DiscreteEnvironment requires a discrete instance")
        self.instance = instance
        self.seed = int(seed)
        self._rng = _stream(seed)
        self._clair = None

    def outcome_indices(self, n: int) -> np.ndarray:
        """Next ``n`` support indices from the episode stream."""
        return sample_support_indices(self.instance.model, self._rng, n)

    def clairvoyant(self):
        """(policy, per-support-point rollouts, per-support-point net rewards)."""
        if self._clair is None:
            policy, _ = solve_dp_discrete(self.instance)
            model = self.instance.model
            rollouts = []
            rewards = np.empty(model.support_size)
            for k in range(model.support_size):
                roll = policy.trace(model.support[k], on_missing="error")
                rollouts.append(roll)
                rewards[k] = rollout_net_reward(
                    self.instance, model.support[k], roll, support_index=k
                )
            self._clair = (policy, rollouts, rewards)
        return self._clair


class GaussianEnvironment:
    """Serves i.i.d. outcomes from a Gaussian instance."""

    def __init__(self, instance: ProblemInstance, seed: int):
        if not isinstance(instance.model, GaussianOutcomeModel):
            raise ValueError("GaussianEnvironment requires a Gaussian instance")
        self.instance = instance
        self.seed = int(seed)
        self._rng = _stream(seed)
        self._chol = np.linalg.cholesky(instance.model.covariance)
        self._clair_policy = None

    def outcomes(self, n: int) -> np.ndarray:
        """Next ``n`` outcome vectors, shape (n, d)."""
        z = self._rng.standard_normal((n, self.instance.d))
        return z @ self._chol.T + self.instance.model.mean

    def clairvoyant_policy(self, quadrature: Optional[QuadratureSpec] = None):
        if self._clair_policy is None:
            self._clair_policy, _ = solve_dp_gaussian(
                self.instance, quadrature or QuadratureSpec()
            )
        return self._clair_policy


def simple_regret(
    instance: ProblemInstance,
    clairvoyant_policy,
    agent_rollout: Rollout,
    x,
    support_index: Optional[int] = None,
) -> float:
    """Net-reward gap between the clairvoyant rollout and the agent rollout on
    the same realized outcome ``x``."""
    clair = clairvoyant_policy.trace(x, on_missing="error")
    best = rollout_net_reward(instance, x, clair, support_index=support_index)
    got = rollout_net_reward(instance, x, agent_rollout, support_index=support_index)
    return best - got


# ---------------------------------------------------------------------------
# Regret traces
# ---------------------------------------------------------------------------

TRACE_COLUMNS = (
    "episode",
    "phase",
    "tests_performed",
    "decision",
    "realized_reward",
    "clairvoyant_reward",
    "simple_regret",
    "cumulative_regret",
)


@dataclass
class RegretTrace:
    """Per-episode record of one agent run."""

    agent: str
    seed: int
    instance_hash: str
    phase: list
    tests_performed: np.ndarray
    decision: list
    realized_reward: np.ndarray
    clairvoyant_reward: np.ndarray
    extras: dict = field(default_factory=dict)
    observations: Optional[list] = None  # per-episode {test index -> value}
    metadata: dict = field(default_factory=dict)
    simple_regret: np.ndarray = None
    cumulative_regret: np.ndarray = None

    def __post_init__(self):
        if self.simple_regret is None:
            self.simple_regret = self.clairvoyant_reward - self.realized_reward
        if self.cumulative_regret is None:
            self.cumulative_regret = np.cumsum(self.simple_regret)
        self.validate()

    @property
    def episodes(self) -> int:
        return len(self.realized_reward)

    @property
    def final_cumulative_regret(self) -> float:
        return float(self.cumulative_regret[-1])

    def validate(self) -> None:
        n = self.episodes
        lengths = {
            "phase": len(self.phase),
            "tests_performed": len(self.tests_performed),
            "decision": len(self.decision),
            "clairvoyant_reward": len(self.clairvoyant_reward),
            "simple_regret": len(self.simple_regret),
            "cumulative_regret": len(self.cumulative_regret),
        }
        for name, ln in lengths.items():
            if ln != n:
                raise ValueError(f"trace column {name} has length {ln}, expected {n}")
        for name, col in self.extras.items():
            if len(col) != n:
                raise ValueError(f"extra column {name} has length {len(col)}, expected {n}")
        if n and np.max(np.abs(np.cumsum(self.simple_regret) - self.cumulative_regret)) > 1e-9:
            raise ValueError("cumulative_regret is not the running sum of simple_regret")


def concatenate_traces(traces: Sequence[RegretTrace]) -> RegretTrace:
    """Stitch batch traces into one run; cumulative regret re-accumulated."""
    first = traces[0]
    return RegretTrace(
        agent=first.agent,
        seed=first.seed,
        instance_hash=first.instance_hash,
        phase=[p for t in traces for p in t.phase],
        tests_performed=np.concatenate([t.tests_performed for t in traces]),
        decision=[d for t in traces for d in t.decision],
        realized_reward=np.concatenate([t.realized_reward for t in traces]),
        clairvoyant_reward=np.concatenate([t.clairvoyant_reward for t in traces]),
        extras={
            k: [v for t in traces for v in t.extras[k]] for k in first.extras
        },
        observations=(
            [o for t in traces for o in t.observations]
            if first.observations is not None
            else None
        ),
        metadata={"batches": [t.metadata for t in traces]},
    )


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_trace_csv(trace: RegretTrace, path) -> None:
    cols = list(TRACE_COLUMNS) + list(trace.extras)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for t in range(trace.episodes):
            row = [
                str(t + 1),
                trace.phase[t],
                str(int(trace.tests_performed[t])),
                trace.decision[t],
                _fmt(trace.realized_reward[t]),
                _fmt(trace.clairvoyant_reward[t]),
                _fmt(trace.simple_regret[t]),
                _fmt(trace.cumulative_regret[t]),
            ]
            for name in trace.extras:
                row.append(_fmt(trace.extras[name][t]))
            fh.write(",".join(row) + "\n")


def write_dataset_csv(trace: RegretTrace, d: int, path) -> None:
    """Table-1-shaped artifact: one row per episode, one column per test,
    the literal ``NA`` for entries the agent never observed."""
    if trace.observations is None:
        raise ValueError("trace was collected without observations")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(["episode"] + [f"test_{i}" for i in range(d)]) + "\n")
        for t, obs in enumerate(trace.observations):
            cells = [_fmt(obs[i]) if i in obs else "NA" for i in range(d)]
            fh.write(",".join([str(t + 1)] + cells) + "\n")


def aggregate_cumulative_regret(traces: Sequence[RegretTrace]):
    """Per-episode mean and (population) standard deviation of cumulative
    regret across replications."""
    stacked = np.vstack([t.cumulative_regret for t in traces])
    return stacked.mean(axis=0), stacked.std(axis=0, ddof=0)


def write_aggregate_csv(traces: Sequence[RegretTrace], path) -> None:
    mean, sd = aggregate_cumulative_regret(traces)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("episode,mean_cumulative_regret,sd_cumulative_regret\n")
        for t in range(len(mean)):
            fh.write(f"{t + 1},{_fmt(mean[t])},{_fmt(sd[t])}\n")


def decision_label(instance: ProblemInstance, decision_index: int) -> str:
    y = instance.decisions[decision_index]
    if isinstance(y, tuple):
        return "|".join(_fmt(v) for v in y)
    return _fmt(y)


def subset_label(indices) -> str:
    return "|".join(str(i) for i in indices)
