"""Replication management: run an agent over seeds, write traces and
aggregates, and summarize finished runs.

Every replication owns its environment and RNG stream (keyed by its seed), so
replications can run in any order or in parallel and still produce
byte-identical artifacts; aggregation is a deterministic reduce over the
seed-sorted traces after all replications complete.
"""

from __future__ import annotations

import json
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .agents import (
    EtcConfig,
    run_etc_discrete,
    run_etc_doubling,
    run_etc_gaussian,
)
from .dp import QuadratureSpec
from .elimination import OcmespConfig, run_ocmesp
from .envs import (
    DiscreteEnvironment,
    GaussianEnvironment,
    RegretTrace,
    aggregate_cumulative_regret,
    decision_label,
    write_aggregate_csv,
    write_dataset_csv,
    write_trace_csv,
)
from .models import (
    DiscreteOutcomeModel,
    InstanceError,
    ProblemInstance,
    instance_hash,
)

AGENTS = ("etc-discrete", "etc-gaussian", "etc-doubling", "ocmesp", "clairvoyant")


@dataclass
class ExperimentConfig:
    """One experiment: an instance, an agent with its parameters, a horizon,
    and the replication seeds."""

    instance: ProblemInstance
    agent: str
    horizon: int
    seeds: tuple
    out_dir: Optional[Path] = None
    jobs: int = 1
    agent_params: dict = field(default_factory=dict)
    emit_dataset: bool = False
    instance_source: str = ""

    def __post_init__(self):
        if self.agent not in AGENTS:
            raise ValueError(f"unknown agent {self.agent!r}; choose from {AGENTS}")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        seeds = tuple(int(s) for s in self.seeds)
        if len(set(seeds)) != len(seeds) or not seeds:
            raise ValueError("seeds must be nonempty and distinct")
        object.__setattr__(self, "seeds", seeds)
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")


def resolved_agent_params(config: ExperimentConfig) -> dict:
    """Agent parameters with defaults filled in (echoed for provenance)."""
    p = dict(config.agent_params)
    instance = config.instance
    if config.agent in ("etc-discrete", "etc-doubling") and isinstance(
        instance.model, DiscreteOutcomeModel
    ):
        p.setdefault("support_hint", instance.model.support_size)
    if not isinstance(instance.model, DiscreteOutcomeModel):
        p.setdefault("sigma_hint", float(instance.model.condition_number))
    if config.agent == "ocmesp":
        p.setdefault("delta", 0.1)
        p.setdefault("bernstein_c", 1.0)
    if config.agent in ("etc-gaussian", "clairvoyant", "etc-doubling") and not isinstance(
        instance.model, DiscreteOutcomeModel
    ):
        p.setdefault("nodes_per_test", 16)
        p.setdefault("max_depth", 6)
    p.setdefault("state_cap", 10**7)
    return p


def _etc_config(config: ExperimentConfig, params: dict) -> EtcConfig:
    quadrature = QuadratureSpec(
        nodes_per_test=int(params.get("nodes_per_test", 16)),
        max_depth=int(params.get("max_depth", 6)),
    )
    return EtcConfig(
        horizon=config.horizon,
        support_size_hint=params.get("support_hint"),
        condition_number=params.get("sigma_hint"),
        override_n=params.get("override_n"),
        assume_zero_mean=bool(params.get("assume_zero_mean", False)),
        quadrature=quadrature,
        state_cap=int(params.get("state_cap", 10**7)),
    )


def _run_clairvoyant(config: ExperimentConfig, seed: int, collect: bool) -> RegretTrace:
    instance = config.instance
    T = config.horizon
    params = resolved_agent_params(config)
    if isinstance(instance.model, DiscreteOutcomeModel):
        env = DiscreteEnvironment(instance, seed)
        _, rollouts, net = env.clairvoyant()
        idx = env.outcome_indices(T)
        tests = np.array([len(rollouts[k].tests) for k in range(len(rollouts))])
        decs = [decision_label(instance, rollouts[k].decision) for k in range(len(rollouts))]
        observations = None
        if collect:
            observations = [
                {i: float(instance.model.support[k, i]) for i in rollouts[k].tests}
                for k in idx
            ]
        return RegretTrace(
            agent="clairvoyant",
            seed=seed,
            instance_hash=instance_hash(instance),
            phase=["commit"] * T,
            tests_performed=tests[idx],
            decision=[decs[k] for k in idx],
            realized_reward=net[idx],
            clairvoyant_reward=net[idx],
            observations=observations,
        )
    env = GaussianEnvironment(instance, seed)
    quadrature = QuadratureSpec(
        nodes_per_test=int(params.get("nodes_per_test", 16)),
        max_depth=int(params.get("max_depth", 6)),
    )
    policy = env.clairvoyant_policy(quadrature)
    xs = env.outcomes(T)
    from .agents import _gaussian_policy_rollouts

    net, tests, dec = _gaussian_policy_rollouts(instance, policy, xs)
    observations = None
    if collect:
        observations = []
        for t in range(T):
            roll = policy.trace(xs[t])
            observations.append({i: float(xs[t, i]) for i in roll.tests})
    return RegretTrace(
        agent="clairvoyant",
        seed=seed,
        instance_hash=instance_hash(instance),
        phase=["commit"] * T,
        tests_performed=tests,
        decision=[decision_label(instance, j) for j in dec],
        realized_reward=net,
        clairvoyant_reward=net,
        observations=observations,
    )


def run_seed(config: ExperimentConfig, seed: int) -> RegretTrace:
    """Run one replication of the configured agent."""
    instance = config.instance
    params = resolved_agent_params(config)
    collect = config.emit_dataset
    agent = config.agent
    if agent == "clairvoyant":
        return _run_clairvoyant(config, seed, collect)
    if agent == "ocmesp":
        if instance.reward.kind != "entropy":
            raise InstanceError("the ocmesp agent requires an entropy-reward instance")
        env = GaussianEnvironment(instance, seed)
        ocfg = OcmespConfig(
            sigma=float(params["sigma_hint"]),
            d=instance.d,
            delta=float(params["delta"]),
            lam=float(instance.reward.lam),
            costs=instance.costs,
            horizon=config.horizon,
            bernstein_c=float(params["bernstein_c"]),
        )
        return run_ocmesp(env, ocfg, collect_observations=collect).trace
    etc_config = _etc_config(config, params)
    if agent == "etc-discrete":
        env = DiscreteEnvironment(instance, seed)
        return run_etc_discrete(env, etc_config, collect_observations=collect).trace
    if agent == "etc-gaussian":
        env = GaussianEnvironment(instance, seed)
        return run_etc_gaussian(env, etc_config, collect_observations=collect).trace
    # etc-doubling
    if isinstance(instance.model, DiscreteOutcomeModel):
        env = DiscreteEnvironment(instance, seed)
    else:
        env = GaussianEnvironment(instance, seed)
    return run_etc_doubling(env, etc_config, collect_observations=collect).trace


def _worker(payload):
    config, seed = payload
    try:
        return seed, "ok", run_seed(config, seed)
    except Exception:
        return seed, "error", traceback.format_exc()


@dataclass
class ReplicationReport:
    traces: dict  # seed -> RegretTrace
    failures: dict  # seed -> traceback string
    mean_cumulative: Optional[np.ndarray] = None
    sd_cumulative: Optional[np.ndarray] = None

    @property
    def ok(self) -> bool:
        return not self.failures


def effective_config_dict(config: ExperimentConfig) -> dict:
    return {
        "agent": config.agent,
        "horizon": config.horizon,
        "seeds": list(config.seeds),
        "jobs": config.jobs,
        "emit_dataset": config.emit_dataset,
        "instance_source": config.instance_source,
        "instance_hash": instance_hash(config.instance),
        "agent_params": resolved_agent_params(config),
    }


def run_replications(config: ExperimentConfig) -> ReplicationReport:
    """Run every seed (in parallel when jobs > 1), write artifacts, aggregate.

    A failed seed is reported in the returned ``failures`` map; the aggregate
    is produced only when every replication succeeded.
    """
    payloads = [(config, seed) for seed in config.seeds]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_worker, payloads))
    else:
        results = [_worker(p) for p in payloads]
    traces = {seed: out for seed, status, out in results if status == "ok"}
    failures = {seed: out for seed, status, out in results if status == "error"}

    report = ReplicationReport(traces=traces, failures=failures)
    ordered = [traces[s] for s in sorted(traces)]
    if not failures and ordered:
        report.mean_cumulative, report.sd_cumulative = aggregate_cumulative_regret(ordered)

    if config.out_dir is not None:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "effective-config.json", "w", encoding="utf-8") as fh:
            json.dump(effective_config_dict(config), fh, indent=1, sort_keys=True)
            fh.write("\n")
        for seed in sorted(traces):
            write_trace_csv(traces[seed], out / f"trace_seed{seed}.csv")
            if config.emit_dataset:
                write_dataset_csv(
                    traces[seed], config.instance.d, out / f"dataset_seed{seed}.csv"
                )
        if not failures and ordered:
            write_aggregate_csv(ordered, out / "aggregate.csv")
    return report


# ---------------------------------------------------------------------------
# Run summaries and dyadic scaling report
# ---------------------------------------------------------------------------


def collect_run_summaries(root) -> list:
    """One summary per finished run directory under ``root`` (a run directory
    holds aggregate.csv next to effective-config.json)."""
    summaries = []
    for dirpath, _, filenames in sorted(os.walk(root)):
        if "aggregate.csv" not in filenames or "effective-config.json" not in filenames:
            continue
        with open(Path(dirpath) / "effective-config.json", encoding="utf-8") as fh:
            cfg = json.load(fh)
        with open(Path(dirpath) / "aggregate.csv", encoding="utf-8") as fh:
            last = fh.readlines()[-1].rstrip("\n").split(",")
        summaries.append(
            {
                "path": dirpath,
                "agent": cfg["agent"],
                "horizon": int(cfg["horizon"]),
                "instance_hash": cfg["instance_hash"],
                "seeds": len(cfg["seeds"]),
                "final_mean": float(last[1]),
                "final_sd": float(last[2]),
            }
        )
    return summaries


def scaling_ratios(summaries: list) -> list:
    """R(2T)/R(T) between runs of the same instance and agent at dyadic
    horizons."""
    ratios = []
    by_key = {}
    for s in summaries:
        by_key.setdefault((s["instance_hash"], s["agent"]), []).append(s)
    for (ih, agent), group in sorted(by_key.items()):
        group = sorted(group, key=lambda s: s["horizon"])
        for lo in group:
            for hi in group:
                if hi["horizon"] == 2 * lo["horizon"] and lo["final_mean"] != 0.0:
                    ratios.append(
                        {
                            "agent": agent,
                            "instance_hash": ih,
                            "T": lo["horizon"],
                            "ratio": hi["final_mean"] / lo["final_mean"],
                        }
                    )
    return ratios


def format_report(summaries: list, ratios: list) -> str:
    lines = ["path,agent,horizon,seeds,final_mean,final_sd"]
    for s in summaries:
        lines.append(
            f"{s['path']},{s['agent']},{s['horizon']},{s['seeds']},"
            f"{s['final_mean']!r},{s['final_sd']!r}"
        )
    if ratios:
        lines.append("")
        lines.append("agent,T,2T,ratio R(2T)/R(T)")
        for r in ratios:
            lines.append(f"{r['agent']},{r['T']},{2 * r['T']},{r['ratio']!r}")
    return "\n".join(lines) + "\n"
