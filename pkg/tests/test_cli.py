import os

import numpy as np
import pytest
from click.testing import CliRunner

from weno_decmdp import cli


@pytest.fixture()
def runner():
    return CliRunner()


def run_ok(runner, args, **kw):
    result = runner.invoke(cli.main, args, catch_exceptions=False, **kw)
    assert result.exit_code == 0, result.output
    return result


SOLVE_SMALL = ["solve", "--ic", "sod", "--n", "32", "--dt", "1e-3", "--steps", "20"]


# --- solve -----------------------------------------------------------------


def test_solve_writes_manifest_summary_and_figure(runner, tmp_path):
    out = tmp_path / "run"
    result = run_ok(runner, SOLVE_SMALL + ["--out", str(out)])
    assert "solve finished" in result.output
    for name in ("manifest.cfg", "final.csv", "summary.txt", "profile.svg"):
        assert (out / name).exists(), name
    manifest = (out / "manifest.cfg").read_text()
    assert "manifest.command = solve" in manifest
    assert "manifest.wall_clock_s = " in manifest  # finalized, not just pre-written
    assert "manifest.outputs.0 = " in manifest
    summary = dict(
        line.split(" = ", 1) for line in (out / "summary.txt").read_text().splitlines()
    )
    assert summary["ic"] == "sod"
    assert summary["n_cells"] == "32"
    assert float(summary["l2_vs_exact"]) > 0.0


def test_solve_snapshot_cadence(runner, tmp_path):
    out = tmp_path / "snaps"
    run_ok(runner, SOLVE_SMALL + ["--snapshot-every", "5", "--out", str(out)])
    snaps = sorted(p.name for p in out.glob("snapshot_*.csv"))
    assert len(snaps) >= 3
    assert (out / "final.csv").exists()


def test_solve_manifest_reproduces_run_bit_for_bit(runner, tmp_path):
    first = tmp_path / "first"
    second = tmp_path / "second"
    run_ok(runner, SOLVE_SMALL + ["--out", str(first)])
    run_ok(runner, ["solve", "--config", str(first / "manifest.cfg"), "--out", str(second)])
    assert (second / "final.csv").read_bytes() == (first / "final.csv").read_bytes()
    assert (second / "summary.txt").read_bytes() == (first / "summary.txt").read_bytes()


def test_solve_flag_beats_config_file(runner, tmp_path):
    cfg = tmp_path / "site.cfg"
    cfg.write_text("solve.ic = sod\nsolve.n = 16\nsolve.dt = 1e-3\nsolve.steps = 5\n")
    out = tmp_path / "out"
    run_ok(runner, ["solve", "--config", str(cfg), "--n", "24", "--out", str(out)])
    summary = dict(
        line.split(" = ", 1) for line in (out / "summary.txt").read_text().splitlines()
    )
    assert summary["n_cells"] == "24"


def test_solve_configuration_errors_exit_2(runner, tmp_path):
    cases = [
        ["solve", "--ic", "sod", "--n", "32"],  # neither steps nor t-final
        ["solve", "--ic", "sod", "--steps", "5", "--t-final", "0.1"],  # both
        ["solve", "--ic", "no-such-tube", "--steps", "5"],
        ["solve", "--ic", "sod", "--steps", "5", "--equation", "maxwell"],
        ["solve", "--ic", "sod", "--steps", "5", "--equation", "euler2d"],
        ["solve", "--ic", "sod", "--steps", "0"],
    ]
    for args in cases:
        result = runner.invoke(cli.main, args + ["--out", str(tmp_path / "e")])
        assert result.exit_code == 2, args


def test_solve_blow_up_exits_3(runner, tmp_path):
    result = runner.invoke(
        cli.main,
        ["solve", "--ic", "sonic-rarefaction", "--n", "32", "--dt", "0.0113", "--steps", "40",
         "--out", str(tmp_path / "b")],
    )
    assert result.exit_code == 3
    assert "blow-up" in result.output


def test_out_dir_from_environment(runner, tmp_path):
    target = tmp_path / "from-env"
    run_ok(runner, SOLVE_SMALL, env={"WENO_DECMDP_OUT": str(target)})
    assert (target / "final.csv").exists()


# --- train -----------------------------------------------------------------

TRAIN_TINY = [
    "train", "--ic", "sod", "--n", "20", "--dt", "1e-3", "--steps", "3",
    "--episodes", "4", "--hidden", "6", "--lr", "1e-2",
]


def test_train_writes_checkpoint_log_and_curve(runner, tmp_path):
    out = tmp_path / "train"
    result = run_ok(runner, TRAIN_TINY + ["--out", str(out)])
    assert "train finished: 4 episodes" in result.output
    for name in ("manifest.cfg", "checkpoint.txt", "train_log.csv", "reward_curve.svg"):
        assert (out / name).exists(), name
    manifest = (out / "manifest.cfg").read_text()
    assert "train.episodes = 4" in manifest
    assert "manifest.command = train" in manifest


def test_train_manifest_reproduces_checkpoint(runner, tmp_path):
    first = tmp_path / "a"
    second = tmp_path / "b"
    run_ok(runner, TRAIN_TINY + ["--out", str(first)])
    run_ok(runner, ["train", "--config", str(first / "manifest.cfg"), "--out", str(second)])
    assert (second / "checkpoint.txt").read_bytes() == (first / "checkpoint.txt").read_bytes()
    assert (second / "train_log.csv").read_bytes() == (first / "train_log.csv").read_bytes()


def test_train_persistent_divergence_exits_3(runner, tmp_path):
    result = runner.invoke(
        cli.main,
        ["train", "--ic", "sonic-rarefaction", "--n", "32", "--dt", "0.0113", "--steps", "10",
         "--episodes", "150", "--hidden", "4", "--out", str(tmp_path / "div")],
    )
    assert result.exit_code == 3
    assert "diverged persistently" in result.output


def test_train_compare_logs_figure(runner, tmp_path):
    log_a = tmp_path / "a"
    log_b = tmp_path / "b"
    run_ok(runner, TRAIN_TINY + ["--out", str(log_a)])
    run_ok(runner, TRAIN_TINY + ["--reward", "bc-weno", "--out", str(log_b)])
    out = tmp_path / "cmp"
    run_ok(
        runner,
        ["train", "--compare-logs", f"{log_a / 'train_log.csv'},{log_b / 'train_log.csv'}",
         "--out", str(out)],
    )
    assert (out / "comparison.svg").exists()


def test_train_compare_missing_log_exits_2(runner, tmp_path):
    result = runner.invoke(
        cli.main,
        ["train", "--compare-logs", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "c")],
    )
    assert result.exit_code == 2


def test_train_lr_anneal_flag(runner, tmp_path):
    out = tmp_path / "anneal"
    run_ok(runner, TRAIN_TINY + ["--lr-final", "1e-3", "--out", str(out)])
    assert "train.lr_final = 0.001" in (out / "manifest.cfg").read_text()
    assert "lr_final = 0.001" in (out / "checkpoint.txt").read_text()


def test_train_rejects_2d_equation(runner, tmp_path):
    result = runner.invoke(
        cli.main, TRAIN_TINY + ["--equation", "euler2d", "--out", str(tmp_path / "t")]
    )
    assert result.exit_code == 2


# --- eval ------------------------------------------------------------------


def test_eval_oracle_table(runner, tmp_path):
    out = tmp_path / "eval"
    result = run_ok(
        runner,
        ["eval", "--oracle", "--ics", "sod", "--ns", "16", "--dt", "1e-3", "--t-final", "0.02",
         "--out", str(out)],
    )
    assert "agent-vs-weno 0" in result.output
    assert (out / "table.csv").exists()
    assert (out / "profile_sod_16.csv").exists()
    assert (out / "profile_sod_16.svg").exists()
    rows = (out / "table.csv").read_text().splitlines()
    assert rows[0].startswith("ic,n_cells,")
    assert rows[1].split(",")[0] == "sod"


def test_eval_trained_checkpoint(runner, tmp_path):
    train_out = tmp_path / "train"
    run_ok(runner, TRAIN_TINY + ["--out", str(train_out)])
    out = tmp_path / "eval"
    run_ok(
        runner,
        ["eval", "--checkpoint", str(train_out / "checkpoint.txt"), "--ics", "sod", "--ns", "16",
         "--dt", "1e-3", "--t-final", "0.02", "--out", str(out)],
    )
    header, row = (out / "table.csv").read_text().splitlines()[:2]
    cells = dict(zip(header.split(","), row.split(",")))
    assert float(cells["l2_agent_vs_weno"]) > 0.0


def test_eval_requires_a_policy_choice(runner, tmp_path):
    result = runner.invoke(
        cli.main, ["eval", "--ics", "sod", "--ns", "16", "--out", str(tmp_path / "e")]
    )
    assert result.exit_code == 2
    assert "--checkpoint" in result.output or "--oracle" in result.output


def test_eval_burgers_report(runner, tmp_path):
    out = tmp_path / "burgers"
    run_ok(
        runner,
        ["eval", "--oracle", "--equation", "burgers", "--ic", "burgers-rarefaction", "--n", "32",
         "--dt", "1e-3", "--t-final", "0.05", "--out", str(out)],
    )
    report = dict(
        line.split(" = ", 1) for line in (out / "burgers_report.txt").read_text().splitlines()
    )
    assert report["equation"] == "burgers1d"
    assert float(report["l2_agent_vs_weno"]) == 0.0


def test_eval_2d_stability_report(runner, tmp_path):
    out = tmp_path / "kh"
    result = run_ok(
        runner,
        ["eval", "--oracle", "--equation", "euler2d", "--n", "16", "--dt", "1e-3",
         "--t-final", "5e-3", "--out", str(out)],
    )
    assert "completed 5 steps" in result.output
    report = dict(
        line.split(" = ", 1) for line in (out / "stability_report.txt").read_text().splitlines()
    )
    assert report["grid"] == "16x16"
    assert report["weno.completed"] == "true"
    assert float(report["weno.min_density"]) > 0.0
    assert float(report["weno.min_pressure"]) > 0.0
    assert (out / "density_weno.csv").exists()
    assert (out / "density_weno.png").exists()


# --- verify ----------------------------------------------------------------


def test_verify_subset_passes(runner, tmp_path):
    out = tmp_path / "verify"
    result = run_ok(runner, ["verify", "--only", "simplex,constant", "--out", str(out)])
    lines = [ln for ln in result.output.splitlines() if ln.startswith(("PASS", "FAIL"))]
    assert len(lines) == 2
    assert all(ln.startswith("PASS") for ln in lines)
    assert (out / "verify_report.txt").read_text().count("PASS") == 2


def test_verify_unknown_property_exits_2(runner, tmp_path):
    result = runner.invoke(
        cli.main, ["verify", "--only", "entropy", "--out", str(tmp_path / "v")]
    )
    assert result.exit_code == 2


# --- misc ------------------------------------------------------------------


def test_version_flag(runner):
    result = run_ok(runner, ["--version"])
    assert "weno-decmdp" in result.output or "version" in result.output


def test_unknown_preset_is_rejected_by_parser(runner):
    result = runner.invoke(cli.main, ["train", "--preset", "cluster"])
    assert result.exit_code == 2
