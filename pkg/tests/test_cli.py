"""CLI tests: exit codes, output files, and CLI/library equivalence."""

import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

import auctionflow.cli as cli
import auctionflow.experiment_harness as eh
from auctionflow.bid_optimizer import ExpMarketOpportunity, solve_fpa_exponential, tune_multiplier


def write_config(tmp_path, name, doc):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------


def test_solve_prints_library_bid(tmp_path, capsys) -> None:
    cfg = write_config(tmp_path, "solve.json", {"p": 0.002, "lam": 500.0, "multiplier": 10.0})
    out = tmp_path / "out"
    rc = cli.main(["solve", "--config", cfg, "--out", str(out)])
    assert rc == 0
    printed = float(capsys.readouterr().out.strip())
    expected = solve_fpa_exponential(ExpMarketOpportunity.from_rates(0.002, 500.0, 500.0), 10.0)
    assert printed == pytest.approx(expected, rel=1e-12)
    result = json.loads((out / "solve_result.json").read_text())
    assert result["bid"] == printed
    assert abs(result["residual_gap"]) < 1e-10
    assert (out / "solve_config.json").exists()


def test_solve_accepts_delta_form(tmp_path, capsys) -> None:
    cfg = write_config(
        tmp_path, "solve.json", {"p": 0.01, "lam": 100.0, "delta": 2.0, "multiplier": 5.0}
    )
    rc = cli.main(["solve", "--config", cfg, "--out", str(tmp_path / "o")])
    assert rc == 0
    printed = float(capsys.readouterr().out.strip())
    expected = solve_fpa_exponential(ExpMarketOpportunity.from_delta(0.01, 100.0, 2.0), 5.0)
    assert printed == expected


def test_solve_rejects_conflicting_rate_fields(tmp_path, capsys) -> None:
    cfg = write_config(
        tmp_path,
        "solve.json",
        {"p": 0.01, "lam": 100.0, "lam1": 50.0, "delta": 2.0, "multiplier": 5.0},
    )
    rc = cli.main(["solve", "--config", cfg, "--out", str(tmp_path / "o")])
    assert rc == 1
    assert "at most one" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------


def test_gen_discrete_round_trips(tmp_path, capsys) -> None:
    cfg = write_config(
        tmp_path, "gen.json", {"kind": "discrete", "n": 6, "N": 15, "alpha_dep": 1.0, "seed": 4}
    )
    out = tmp_path / "out"
    rc = cli.main(["gen", "--config", cfg, "--out", str(out)])
    assert rc == 0
    path = capsys.readouterr().out.strip()
    assert path == str(out / "landscape.npz")
    land = eh.load_landscape(path)
    ref = eh.generate_discrete_landscape(6, 15, 1.0, 4)
    np.testing.assert_array_equal(land.joints, ref.joints)
    np.testing.assert_array_equal(land.wins, ref.wins)
    resolved = json.loads((out / "gen_config.json").read_text())
    assert resolved == {"kind": "discrete", "n": 6, "N": 15, "alpha_dep": 1.0, "seed": 4}


def test_gen_seed_override(tmp_path, capsys) -> None:
    cfg = write_config(tmp_path, "gen.json", {"kind": "exponential", "N": 20, "seed": 1})
    out = tmp_path / "out"
    rc = cli.main(["gen", "--config", cfg, "--out", str(out), "--seed", "7"])
    assert rc == 0
    capsys.readouterr()
    land = eh.load_landscape(out / "landscape.npz")
    assert land.seed == 7
    np.testing.assert_array_equal(land.p, eh.generate_exponential_landscape(20, 0.0, 0.0, 7).p)


def test_gen_requires_known_kind(tmp_path, capsys) -> None:
    cfg = write_config(tmp_path, "gen.json", {"kind": "mystery"})
    rc = cli.main(["gen", "--config", cfg, "--out", str(tmp_path / "o")])
    assert rc == 1
    assert "discrete" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# tune
# ---------------------------------------------------------------------------


def test_tune_matches_library_and_writes_trace(tmp_path, capsys) -> None:
    cfg = write_config(
        tmp_path,
        "tune.json",
        {"budget": 0.05, "landscape": {"N": 60, "logdelta_sd": 0.3, "seed": 9}},
    )
    out = tmp_path / "out"
    rc = cli.main(["tune", "--config", cfg, "--out", str(out)])
    assert rc == 0
    printed = float(capsys.readouterr().out.strip())
    land = eh.generate_exponential_landscape(60, 0.0, 0.3, 9)
    state, conversions = tune_multiplier(land, 0.05, delta=1e-3, max_iter=200)
    assert printed == state.C
    result = json.loads((out / "tune_result.json").read_text())
    assert result["converged"] is True
    assert result["multiplier"] == state.C
    assert result["expected_conversions"] == conversions
    trace = (out / "tuning_trace.csv").read_text().splitlines()
    assert trace[0] == "iter,C,S,r"
    assert len(trace) == state.iterations + 1


def test_tune_non_convergence_exits_2_with_tables(tmp_path, capsys) -> None:
    cfg = write_config(
        tmp_path,
        "tune.json",
        {"budget": 0.05, "landscape": {"N": 60, "seed": 9}, "max_iter": 1, "delta": 1e-9},
    )
    out = tmp_path / "out"
    rc = cli.main(["tune", "--config", cfg, "--out", str(out)])
    assert rc == 2
    assert "did not converge" in capsys.readouterr().err
    result = json.loads((out / "tune_result.json").read_text())
    assert result["converged"] is False
    assert (out / "tuning_trace.csv").exists()


def test_tune_requires_exactly_one_landscape_source(tmp_path, capsys) -> None:
    cfg = write_config(tmp_path, "tune.json", {"budget": 0.05})
    rc = cli.main(["tune", "--config", cfg, "--out", str(tmp_path / "o")])
    assert rc == 1
    assert "exactly one" in capsys.readouterr().err


def test_tune_from_saved_landscape(tmp_path, capsys) -> None:
    land = eh.generate_exponential_landscape(40, 0.1, 0.2, 3)
    path = tmp_path / "land.npz"
    eh.save_landscape(land, path)
    cfg = write_config(tmp_path, "tune.json", {"budget": 0.02, "landscape_path": str(path)})
    rc = cli.main(["tune", "--config", cfg, "--out", str(tmp_path / "o")])
    assert rc == 0
    printed = float(capsys.readouterr().out.strip())
    state, _ = tune_multiplier(land, 0.02, delta=1e-3, max_iter=200)
    assert printed == state.C


# ---------------------------------------------------------------------------
# experiment
# ---------------------------------------------------------------------------


def test_experiment_profit_matches_library(tmp_path, capsys) -> None:
    doc = {
        "kind": "profit_ratio",
        "seeds": [0, 1],
        "mus": [0.1, 1.0],
        "alpha_deps": [0.0, 2.0],
        "n_levels": 8,
        "n_opportunities": 120,
    }
    cfg = write_config(tmp_path, "exp.json", doc)
    out = tmp_path / "out"
    rc = cli.main(["experiment", "--config", cfg, "--out", str(out), "--jobs", "2"])
    assert rc == 0
    table = capsys.readouterr().out.strip()
    assert table == str(out / "profit_ratio.csv")
    rows = eh.read_profit_csv(table)
    assert rows == eh.run_profit_ratio_experiment(eh.ExperimentConfig.from_dict(doc))
    assert (out / "profit_ratio_config.json").exists()


def test_experiment_conversion_header_and_rows(tmp_path, capsys) -> None:
    doc = {
        "kind": "conversion_ratio",
        "seeds": [0],
        "budgets": [0.05],
        "logdelta_means": [0.0],
        "logdelta_sds": [0.3],
        "exp_n_opportunities": 300,
    }
    cfg = write_config(tmp_path, "exp.json", doc)
    out = tmp_path / "out"
    rc = cli.main(["experiment", "--config", cfg, "--out", str(out)])
    assert rc == 0
    capsys.readouterr()
    lines = (out / "conversion_ratio.csv").read_text().splitlines()
    assert lines[0] == "budget,logdelta_mean,logdelta_sd,seed,conv_dep,conv_indep,ratio"
    assert len(lines) == 2
    row = eh.read_conversion_csv(out / "conversion_ratio.csv")[0]
    assert row.converged and row.ratio >= 1.0 - 1e-9


def test_experiment_conversion_non_convergence_exits_2(tmp_path, capsys) -> None:
    doc = {
        "kind": "conversion_ratio",
        "seeds": [0],
        "budgets": [0.05],
        "logdelta_means": [0.0],
        "logdelta_sds": [0.3],
        "exp_n_opportunities": 300,
        "pacing_max_iter": 1,
        "pacing_tolerance": 1e-12,
    }
    cfg = write_config(tmp_path, "exp.json", doc)
    out = tmp_path / "out"
    rc = cli.main(["experiment", "--config", cfg, "--out", str(out)])
    assert rc == 2
    assert "did not converge" in capsys.readouterr().err
    rows = eh.read_conversion_csv(out / "conversion_ratio.csv")
    assert len(rows) == 1 and not rows[0].converged and math.isnan(rows[0].ratio)


def test_experiment_poisson_writes_table_and_qq(tmp_path, capsys) -> None:
    doc = {
        "kind": "poisson_check",
        "seeds": [0],
        "strata": [{"name": "tiny", "n_users": 15, "per_user_rate": 0.01,
                    "min_gap": 2.0, "cluster_excess": 0.5}],
        "granularities": [300.0, 10.0],
        "horizon": 600.0,
        "n_replicates": 6,
    }
    cfg = write_config(tmp_path, "exp.json", doc)
    out = tmp_path / "out"
    rc = cli.main(["experiment", "--config", cfg, "--out", str(out)])
    assert rc == 0
    capsys.readouterr()
    rows = eh.read_poisson_csv(out / "poisson_check.csv")
    assert [r.granularity for r in rows] == [300.0, 10.0]
    qq_lines = (out / "poisson_check_qq.csv").read_text().splitlines()
    assert qq_lines[0] == "x,y,series"
    assert len(qq_lines) > 2


def test_experiment_respects_output_path(tmp_path, capsys) -> None:
    doc = {
        "kind": "profit_ratio",
        "seeds": [0],
        "mus": [1.0],
        "alpha_deps": [0.0],
        "n_levels": 5,
        "n_opportunities": 30,
        "output_path": "custom.csv",
    }
    cfg = write_config(tmp_path, "exp.json", doc)
    out = tmp_path / "out"
    rc = cli.main(["experiment", "--config", cfg, "--out", str(out)])
    assert rc == 0
    capsys.readouterr()
    assert (out / "custom.csv").exists()


def test_diagnose_defaults_to_poisson_kind(tmp_path, capsys) -> None:
    doc = {
        "seeds": [0],
        "strata": [{"name": "tiny", "n_users": 15, "per_user_rate": 0.01,
                    "min_gap": 2.0, "cluster_excess": 0.5}],
        "granularities": [300.0, 10.0],
        "horizon": 600.0,
        "n_replicates": 6,
    }
    cfg = write_config(tmp_path, "diag.json", doc)
    out = tmp_path / "out"
    rc = cli.main(["diagnose", "--config", cfg, "--out", str(out)])
    assert rc == 0
    capsys.readouterr()
    assert (out / "diagnostics.csv").exists()
    assert (out / "diagnostics_qq.csv").exists()
    resolved = json.loads((out / "diagnose_config.json").read_text())
    assert resolved["kind"] == "poisson_check"


# ---------------------------------------------------------------------------
# error handling and exit codes
# ---------------------------------------------------------------------------


def test_missing_config_exits_1_with_no_partial_files(tmp_path, capsys) -> None:
    out = tmp_path / "out"
    rc = cli.main(["solve", "--config", str(tmp_path / "nope.json"), "--out", str(out)])
    assert rc == 1
    assert "not found" in capsys.readouterr().err
    assert not out.exists()


def test_unparseable_config_reports_position(tmp_path, capsys) -> None:
    bad = tmp_path / "bad.json"
    bad.write_text('{"p": 0.1,\n  broken')
    rc = cli.main(["solve", "--config", str(bad), "--out", str(tmp_path / "o")])
    assert rc == 1
    err = capsys.readouterr().err
    assert "line 2" in err
    assert not (tmp_path / "o").exists()


def test_unknown_config_field_exits_1(tmp_path, capsys) -> None:
    cfg = write_config(
        tmp_path, "solve.json", {"p": 0.1, "lam": 5.0, "multiplier": 1.0, "typo": 1}
    )
    rc = cli.main(["solve", "--config", cfg, "--out", str(tmp_path / "o")])
    assert rc == 1
    assert "typo" in capsys.readouterr().err


def test_missing_required_field_exits_1(tmp_path, capsys) -> None:
    cfg = write_config(tmp_path, "solve.json", {"p": 0.1, "lam": 5.0})
    rc = cli.main(["solve", "--config", cfg, "--out", str(tmp_path / "o")])
    assert rc == 1
    assert "multiplier" in capsys.readouterr().err


def test_usage_errors_map_to_exit_1(capsys) -> None:
    assert cli.main([]) == 1
    assert cli.main(["solve"]) == 1
    capsys.readouterr()


def test_help_exits_0(capsys) -> None:
    assert cli.main(["--help"]) == 0
    capsys.readouterr()


# ---------------------------------------------------------------------------
# console entry point and log env var
# ---------------------------------------------------------------------------


def run_module(argv, tmp_path, log_level=None):
    env = dict(os.environ)
    if log_level is not None:
        env["AUCTIONFLOW_LOG"] = log_level
    return subprocess.run(
        [sys.executable, "-m", "auctionflow.cli", *argv],
        capture_output=True, text=True, env=env, cwd=str(tmp_path),
    )


def test_module_invocation_and_log_env(tmp_path) -> None:
    cfg = write_config(tmp_path, "solve.json", {"p": 0.002, "lam": 500.0, "multiplier": 10.0})
    quiet = run_module(["solve", "--config", cfg, "--out", str(tmp_path / "a")], tmp_path)
    assert quiet.returncode == 0
    assert "resolved config" not in quiet.stderr
    chatty = run_module(
        ["solve", "--config", cfg, "--out", str(tmp_path / "b")], tmp_path, log_level="info"
    )
    assert chatty.returncode == 0
    assert "resolved config" in chatty.stderr
    assert quiet.stdout == chatty.stdout
