"""CLI surface: subcommands, flags, exit codes, machine-readable outputs."""

import json

import numpy as np
import pytest

from seqtest.cli import main
from seqtest.models import load_instance


def run_cli(*argv):
    return main(list(argv))


class TestGen:
    def test_pareto_valid_json(self, tmp_path, capsys):
        out = tmp_path / "p.json"
        assert run_cli("gen", "pareto", "--d", "4", "--seed", "7", "--out", str(out)) == 0
        inst = load_instance(out)
        assert abs(inst.model.probs.sum() - 1.0) <= 1e-9
        assert inst.model.support_size == 16

    def test_single_lb_p0(self, tmp_path):
        out = tmp_path / "s.json"
        assert run_cli("gen", "single-lb", "--eps", "0.2", "--which", "1", "--out", str(out)) == 0
        inst = load_instance(out)
        assert abs(inst.model.probs[0] - 0.6) <= 1e-12

    def test_gaussian_lowrank_pd(self, tmp_path):
        out = tmp_path / "g.json"
        assert run_cli("gen", "gaussian-lowrank", "--d", "6", "--seed", "3", "--out", str(out)) == 0
        inst = load_instance(out)
        assert np.linalg.eigvalsh(inst.model.covariance)[0] > 0

    def test_invalid_params_exit_2(self, tmp_path, capsys):
        out = tmp_path / "bad.json"
        code = run_cli("gen", "single-lb", "--eps", "1.5", "--which", "1", "--out", str(out))
        assert code == 2
        assert "error" in capsys.readouterr().err

    def test_unknown_generator_exit_1(self, capsys):
        assert run_cli("gen", "nope", "--out", "x.json") == 1


class TestSolve:
    def test_single_test_instance(self, tmp_path, capsys):
        inst_path = tmp_path / "s.json"
        run_cli("gen", "single-lb", "--eps", "0.2", "--which", "1", "--out", str(inst_path))
        capsys.readouterr()
        assert run_cli("solve", "--instance", str(inst_path)) == 0
        out = json.loads(capsys.readouterr().out)
        assert abs(out["value"] - (-0.4)) <= 1e-12
        assert out["action"] == "decide:0"

    def test_policy_dump_flag(self, tmp_path, capsys):
        inst_path = tmp_path / "s.json"
        run_cli("gen", "single-lb", "--eps", "0.2", "--which", "1", "--out", str(inst_path))
        dump = tmp_path / "policy.json"
        assert run_cli("solve", "--instance", str(inst_path), "--dump-policy", str(dump)) == 0
        records = json.loads(dump.read_text())
        assert {"state_key", "action", "value"} == set(records[0])

    def test_blowup_guard_exit_2(self, tmp_path, capsys):
        inst_path = tmp_path / "p.json"
        run_cli("gen", "pareto", "--d", "6", "--seed", "0", "--out", str(inst_path))
        capsys.readouterr()
        code = run_cli("solve", "--instance", str(inst_path), "--state-cap", "3")
        assert code == 2
        assert "blowup" in capsys.readouterr().err

    def test_entropy_instance_solved_offline(self, tmp_path, capsys):
        inst_path = tmp_path / "g.json"
        run_cli("gen", "gaussian-lowrank", "--d", "4", "--seed", "1", "--cost", "1.7",
                "--out", str(inst_path))
        capsys.readouterr()
        assert run_cli("solve", "--instance", str(inst_path)) == 0
        out = json.loads(capsys.readouterr().out)
        assert "subset" in out

    def test_missing_instance_exit_2(self, tmp_path, capsys):
        assert run_cli("solve", "--instance", str(tmp_path / "none.json")) == 2


class TestSimulate:
    def test_trace_files_and_aggregate(self, tmp_path):
        inst_path = tmp_path / "p.json"
        run_cli("gen", "pareto", "--d", "3", "--seed", "2", "--out", str(inst_path))
        out_dir = tmp_path / "run"
        code = run_cli(
            "simulate", "--instance", str(inst_path), "--agent", "etc-discrete",
            "--horizon", "64", "--seeds", "0,1,2,3,4", "--out", str(out_dir),
        )
        assert code == 0
        traces = sorted(p.name for p in out_dir.glob("trace_seed*.csv"))
        assert len(traces) == 5
        assert (out_dir / "aggregate.csv").exists()
        assert (out_dir / "effective-config.json").exists()

    def test_explore_row_count_matches_schedule(self, tmp_path):
        inst_path = tmp_path / "p.json"
        run_cli("gen", "pareto", "--d", "3", "--seed", "2", "--out", str(inst_path))
        out_dir = tmp_path / "run"
        run_cli(
            "simulate", "--instance", str(inst_path), "--agent", "etc-discrete",
            "--horizon", "512", "--seeds", "0", "--out", str(out_dir),
            "--support-hint", "8",
        )
        rows = (out_dir / "trace_seed0.csv").read_text().splitlines()[1:]
        explore = [r for r in rows if r.split(",")[1] == "explore"]
        assert len(explore) == 128  # floor(8^(1/3) * 512^(2/3))

    def test_rerun_identical_bytes(self, tmp_path):
        inst_path = tmp_path / "p.json"
        run_cli("gen", "pareto", "--d", "3", "--seed", "2", "--out", str(inst_path))
        args = [
            "simulate", "--instance", str(inst_path), "--agent", "etc-doubling",
            "--horizon", "100", "--seeds", "0,1", "--jobs", "2",
        ]
        run_cli(*args, "--out", str(tmp_path / "a"))
        run_cli(*args, "--out", str(tmp_path / "b"))
        for p in sorted((tmp_path / "a").iterdir()):
            assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()

    def test_bad_seed_list_exit_1(self, tmp_path, capsys):
        inst_path = tmp_path / "p.json"
        run_cli("gen", "pareto", "--d", "3", "--seed", "2", "--out", str(inst_path))
        code = run_cli(
            "simulate", "--instance", str(inst_path), "--agent", "etc-discrete",
            "--horizon", "16", "--seeds", "0,x", "--out", str(tmp_path / "r"),
        )
        assert code == 1

    def test_agent_instance_mismatch_exit_2(self, tmp_path, capsys):
        inst_path = tmp_path / "p.json"
        run_cli("gen", "pareto", "--d", "3", "--seed", "2", "--out", str(inst_path))
        code = run_cli(
            "simulate", "--instance", str(inst_path), "--agent", "ocmesp",
            "--horizon", "16", "--seeds", "0", "--out", str(tmp_path / "r"),
        )
        assert code == 2


class TestReport:
    def test_report_prints_ratio(self, tmp_path, capsys):
        inst_path = tmp_path / "s.json"
        run_cli("gen", "single-lb", "--eps", "0.2", "--which", "1", "--out", str(inst_path))
        for T in (64, 128):
            run_cli(
                "simulate", "--instance", str(inst_path), "--agent", "etc-discrete",
                "--horizon", str(T), "--seeds", "0,1", "--out", str(tmp_path / f"T{T}"),
            )
        capsys.readouterr()
        assert run_cli("report", "--dir", str(tmp_path)) == 0
        out = capsys.readouterr().out
        assert "ratio" in out and "etc-discrete" in out

    def test_single_trace_sd_zero(self, tmp_path, capsys):
        inst_path = tmp_path / "s.json"
        run_cli("gen", "single-lb", "--eps", "0.2", "--which", "1", "--out", str(inst_path))
        run_cli(
            "simulate", "--instance", str(inst_path), "--agent", "etc-discrete",
            "--horizon", "32", "--seeds", "5", "--out", str(tmp_path / "one"),
        )
        capsys.readouterr()
        assert run_cli("report", "--dir", str(tmp_path / "one")) == 0
        line = capsys.readouterr().out.splitlines()[1]
        assert line.endswith(",0.0")

    def test_empty_dir_exit_nonzero(self, tmp_path, capsys):
        assert run_cli("report", "--dir", str(tmp_path)) == 1


class TestUsageErrors:
    def test_unknown_flag(self, capsys):
        assert run_cli("solve", "--nope") == 1

    def test_unknown_agent(self, tmp_path, capsys):
        inst_path = tmp_path / "p.json"
        run_cli("gen", "pareto", "--d", "3", "--seed", "2", "--out", str(inst_path))
        code = run_cli(
            "simulate", "--instance", str(inst_path), "--agent", "zen",
            "--horizon", "4", "--seeds", "0", "--out", str(tmp_path / "r"),
        )
        assert code == 1

    def test_missing_subcommand(self, capsys):
        assert run_cli() == 1
