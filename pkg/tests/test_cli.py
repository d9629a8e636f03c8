"""End-to-end command line behavior: exit codes, outputs, reproducibility."""

import json
import os

import numpy as np
import pytest

from hetsvm import cli


def _write_toy_csv(path, n=40, seed=2):
    rng = np.random.default_rng(seed)
    d = rng.integers(0, 2, n)
    x1 = rng.uniform(-2, 2, n)
    x2 = rng.uniform(0, 10, n)
    p = 0.3 + 0.4 * d * (x1 > 0)
    y = (rng.random(n) < p).astype(int)
    w = rng.uniform(0.5, 2.0, n)
    lines = ["y,d,x1,x2,w"]
    for i in range(n):
        lines.append(f"{y[i]},{d[i]},{float(x1[i])!r},{float(x2[i])!r},{float(w[i])!r}")
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def toy_csv(tmp_path):
    return _write_toy_csv(tmp_path / "toy.csv")


def _fit_args(toy_csv, out, extra=()):
    return [
        "fit",
        "--data", str(toy_csv),
        "--outcome", "y",
        "--treatment", "d",
        "--covariates", "x1,x2",
        "--effect-interactions", "all",
        "--out", str(out),
        *extra,
    ]


# ---------------------------------------------------------------------------
# fit


def test_fit_writes_expected_outputs(toy_csv, tmp_path):
    out = tmp_path / "out"
    assert cli.main(_fit_args(toy_csv, out)) == 0
    for name in ("fit.json", "coefficients.csv", "coefficients_nonzero.csv", "manifest.json"):
        assert (out / name).exists(), name
    assert not any(p.name.startswith(".tmp-") for p in out.iterdir())

    text = (out / "coefficients.csv").read_text().splitlines()
    assert text[0] == cli.PP_NOTE
    assert text[1].split(",")[:3] == ["block", "name", "kind"]
    # one intercept row + effect rows + adjust rows
    n_rows = len(text) - 2
    assert n_rows == 1 + 3 + 2

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "fit"
    assert manifest["settings"]["design"]["outcome"] == "y"
    assert "data_sha256" in manifest["settings"]
    assert manifest["selected"]["lam_effect"] > 0


def test_fit_outputs_are_reproducible(toy_csv, tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert cli.main(_fit_args(toy_csv, out1)) == 0
    assert cli.main(_fit_args(toy_csv, out2)) == 0
    for name in ("fit.json", "coefficients.csv", "coefficients_nonzero.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name


def test_fit_trace_flag_writes_trace(toy_csv, tmp_path):
    out = tmp_path / "out"
    assert cli.main(_fit_args(toy_csv, out, extra=("--trace",))) == 0
    lines = (out / "trace.csv").read_text().splitlines()
    assert lines[0].split(",") == ["round", "lam_effect", "lam_adjust", "n_nonzero", "active_size", "gcv"]
    assert len(lines) > 2


def test_fit_nonzero_table_is_subset(toy_csv, tmp_path):
    out = tmp_path / "out"
    assert cli.main(_fit_args(toy_csv, out)) == 0
    all_rows = (out / "coefficients.csv").read_text().splitlines()[2:]
    nz_rows = (out / "coefficients_nonzero.csv").read_text().splitlines()[2:]
    assert set(nz_rows) <= set(all_rows)
    assert any(r.startswith("intercept,") for r in nz_rows)


def test_flags_override_config(toy_csv, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("outcome = y\ntreatment = d\ncovariates = x1\n")
    out = tmp_path / "out"
    code = cli.main(
        [
            "fit",
            "--data", str(toy_csv),
            "--config", str(cfg),
            "--covariates", "x1,x2",
            "--out", str(out),
        ]
    )
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["settings"]["design"]["covariates"] == ["x1", "x2"]


def test_custom_grid_flag(toy_csv, tmp_path):
    out = tmp_path / "out"
    code = cli.main(_fit_args(toy_csv, out, extra=("--grid=-2:2:5", "--precision", "1.0")))
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["settings"]["grid"] == [-2.0, -1.0, 0.0, 1.0, 2.0]


# ---------------------------------------------------------------------------
# exit codes


def test_missing_required_roles_is_config_error(toy_csv, tmp_path):
    code = cli.main(["fit", "--data", str(toy_csv), "--out", str(tmp_path / "o")])
    assert code == cli.EXIT_CONFIG


def test_unknown_config_key_is_config_error(toy_csv, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("outcome=y\ntreatment=d\nwat=1\n")
    code = cli.main(
        ["fit", "--data", str(toy_csv), "--config", str(cfg), "--out", str(tmp_path / "o")]
    )
    assert code == cli.EXIT_CONFIG


def test_bad_grid_is_config_error(toy_csv, tmp_path):
    code = cli.main(_fit_args(toy_csv, tmp_path / "o", extra=("--grid", "5:1:3")))
    assert code == cli.EXIT_CONFIG


def test_missing_column_is_data_error(toy_csv, tmp_path):
    code = cli.main(
        [
            "fit",
            "--data", str(toy_csv),
            "--outcome", "nope",
            "--treatment", "d",
            "--out", str(tmp_path / "o"),
        ]
    )
    assert code == cli.EXIT_DATA


def test_non_numeric_outcome_is_data_error(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("y,d\nmaybe,1\n0,0\n")
    code = cli.main(
        ["fit", "--data", str(path), "--outcome", "y", "--treatment", "d", "--out", str(tmp_path / "o")]
    )
    assert code == cli.EXIT_DATA


def test_missing_data_file_is_data_error(tmp_path):
    code = cli.main(
        [
            "fit",
            "--data", str(tmp_path / "absent.csv"),
            "--outcome", "y",
            "--treatment", "d",
            "--out", str(tmp_path / "o"),
        ]
    )
    assert code == cli.EXIT_DATA


def test_small_simulation_sizes_rejected(tmp_path):
    code = cli.main(
        [
            "simulate",
            "--scenario", "2",
            "--sizes", "10",
            "--replicates", "1",
            "--seed", "1",
            "--out", str(tmp_path / "o"),
        ]
    )
    assert code == cli.EXIT_CONFIG


def test_unknown_scenario_rejected(tmp_path):
    code = cli.main(
        [
            "simulate",
            "--scenario", "9",
            "--sizes", "250",
            "--replicates", "1",
            "--seed", "1",
            "--out", str(tmp_path / "o"),
        ]
    )
    assert code == cli.EXIT_CONFIG


# ---------------------------------------------------------------------------
# effects


def test_effects_pipeline_round_trip(toy_csv, tmp_path):
    fit_out = tmp_path / "fit"
    assert cli.main(_fit_args(toy_csv, fit_out)) == 0
    eff_out = tmp_path / "eff"
    code = cli.main(
        [
            "effects",
            "--data", str(toy_csv),
            "--outcome", "y",
            "--treatment", "d",
            "--covariates", "x1,x2",
            "--effect-interactions", "all",
            "--fit", str(fit_out / "fit.json"),
            "--out", str(eff_out),
            "--extremes", "5",
        ]
    )
    assert code == 0
    for name in (
        "ranked_treatments.csv",
        "unit_cates.csv",
        "group_extremes.csv",
        "effects_summary.json",
        "manifest.json",
    ):
        assert (eff_out / name).exists(), name

    unit_lines = (eff_out / "unit_cates.csv").read_text().splitlines()
    assert unit_lines[0] == cli.PP_NOTE
    assert len(unit_lines) == 2 + 40  # note + header + one row per unit

    extreme_lines = (eff_out / "group_extremes.csv").read_text().splitlines()
    header = extreme_lines[1].split(",")
    assert header[:5] == ["group", "rank", "unit", "cate_pp", "weight"]
    assert "x1" in header and "x2" in header
    assert len(extreme_lines) == 2 + 2 * 5

    summary = json.loads((eff_out / "effects_summary.json").read_text())
    assert summary["treatment"] == "d"
    assert -100.0 <= summary["ate_pp"] <= 100.0


def test_effects_rejects_mismatched_fit(toy_csv, tmp_path):
    fit_out = tmp_path / "fit"
    assert cli.main(_fit_args(toy_csv, fit_out)) == 0
    code = cli.main(
        [
            "effects",
            "--data", str(toy_csv),
            "--outcome", "y",
            "--treatment", "d",
            "--covariates", "x1",  # schema no longer matches the saved fit
            "--effect-interactions", "all",
            "--fit", str(fit_out / "fit.json"),
            "--out", str(tmp_path / "eff"),
        ]
    )
    assert code == cli.EXIT_DATA


# ---------------------------------------------------------------------------
# simulation commands


def test_simulate_scenario_two_writes_payoff_tables(tmp_path):
    out = tmp_path / "sim"
    code = cli.main(
        [
            "simulate",
            "--scenario", "2",
            "--sizes", "250",
            "--replicates", "2",
            "--seed", "3",
            "--eval-n", "400",
            "--out", str(out),
        ]
    )
    assert code == 0
    for name in ("payoff.csv", "curves.csv", "manifest.json"):
        assert (out / name).exists(), name
    # discovery table is written as a header-only stub for scenario-2
    assert len((out / "fdr_dr.csv").read_text().splitlines()) == 1

    lines = (out / "payoff.csv").read_text().splitlines()
    rows = [dict(zip(lines[0].split(","), ln.split(","))) for ln in lines[1:]]
    methods = {r["method"] for r in rows}
    assert methods == {"svm", "oracle", "treat_everyone", "treat_nobody"}
    oracle = next(r for r in rows if r["method"] == "oracle")
    assert abs(float(oracle["payoff_pct"]) - 100.0) < 1e-9

    manifest = json.loads((out / "manifest.json").read_text())
    info = manifest["scenario_info"]
    assert info["clamp_fraction"] < 0.05
    assert info["population_ate_pp"] < 0


def test_simulate_scenario_one_writes_fdr_table(tmp_path):
    out = tmp_path / "sim1"
    code = cli.main(
        [
            "simulate",
            "--scenario", "1",
            "--sizes", "60",
            "--replicates", "1",
            "--seed", "3",
            "--out", str(out),
        ]
    )
    assert code == 0
    assert (out / "fdr_dr.csv").exists()
    assert len((out / "payoff.csv").read_text().splitlines()) == 1
    lines = (out / "fdr_dr.csv").read_text().splitlines()
    assert lines[0].split(",") == ["scenario", "n", "mode", "fdr", "dr", "replicates_used"]
    assert len(lines) == 1 + 2  # largest + top3 for the single size


def test_payoff_command_is_scenario_two_shortcut(tmp_path):
    out = tmp_path / "pay"
    code = cli.main(
        [
            "payoff",
            "--sizes", "250",
            "--replicates", "2",
            "--seed", "3",
            "--eval-n", "400",
            "--out", str(out),
        ]
    )
    assert code == 0
    assert (out / "payoff.csv").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["settings"]["scenario"] == "scenario-2"


def test_simulation_outputs_identical_across_runs(tmp_path):
    args = [
        "simulate",
        "--scenario", "2",
        "--sizes", "250",
        "--replicates", "2",
        "--seed", "3",
        "--eval-n", "400",
    ]
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert cli.main(args + ["--out", str(out1)]) == 0
    assert cli.main(args + ["--out", str(out2)]) == 0
    assert (out1 / "payoff.csv").read_bytes() == (out2 / "payoff.csv").read_bytes()
    assert (out1 / "curves.csv").read_bytes() == (out2 / "curves.csv").read_bytes()


def test_version_flag():
    with pytest.raises(SystemExit) as exc:
        cli.main(["--version"])
    assert exc.value.code == 0
