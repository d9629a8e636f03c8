"""Command-line front end: CSV in, fitted models and result tables out.

Subcommands: ``fit`` (design + tuning + fit from a CSV), ``effects``
(treatment-effect tables from a saved fit), ``simulate`` (Monte Carlo
study) and ``payoff`` (the treatment-rule payoff study, a scenario-2
shortcut for ``simulate``).

Column roles come from a flat key=value config file, a flag, or both;
flags override config keys.  Exit codes: 0 success, 2 configuration
error, 3 data error, 4 tuning/calibration failure (also systematic
replicate failure above 10%).  Output tables are written atomically
(temp file + rename), so a crash never leaves a partial CSV behind.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import logging
import os
import sys
import tempfile

import numpy as np

from . import __version__, effects, simulate, svm, tuning
from .design import DesignSpec, build_design, load_table, parse_config
from .errors import (
    CalibrationError,
    ConfigError,
    DataError,
    DegenerateFitError,
    NotEstimableError,
    TuningError,
)
from .lasso import DEFAULT_BACKEND, available_backends

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TUNING = 4

# Margins are on the +-1 outcome scale and effects are half a clamped margin
# difference, so one coefficient unit moves the outcome probability by up to
# 50 percentage points.
PP_NOTE = (
    "# effects and coefficients in percentage points (pp): "
    "effect_pp = 100 * effect, coef_pp = 50 * coef"
)

FAILURE_EXIT_FRACTION = 0.10

_SCENARIO_ALIASES = {
    "1": "scenario-1-correct",
    "1m": "scenario-1-misspecified",
    "2": "scenario-2",
}


# ---------------------------------------------------------------------------
# Output helpers


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(value) -> str:
    if value is None:
        return "NA"
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path: str, fieldnames: list[str], rows: list[dict], comment: str | None = None):
    buf = io.StringIO()
    if comment:
        buf.write(comment + "\n")
    buf.write(",".join(fieldnames) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(row.get(name)) for name in fieldnames) + "\n")
    _atomic_write(path, buf.getvalue())


def _write_json(path: str, doc: dict) -> None:
    _atomic_write(path, json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _manifest(command: str, settings: dict, **extra) -> dict:
    doc = {
        "command": command,
        "version": __version__,
        "numpy_version": np.__version__,
        "python_version": sys.version.split()[0],
        "backends_available": available_backends(),
        "settings": settings,
        "config_sha256": _sha256_text(json.dumps(settings, sort_keys=True)),
    }
    doc.update(extra)
    return doc


# ---------------------------------------------------------------------------
# Config assembly


def _split_items(chunks: list[str]) -> list[str]:
    out: list[str] = []
    for chunk in chunks:
        out.extend(p.strip() for p in chunk.split(",") if p.strip())
    return out


def _design_spec(args) -> DesignSpec:
    if args.config:
        try:
            with open(args.config) as fh:
                spec = parse_config(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
    else:
        if not args.outcome or not args.treatment:
            raise ConfigError("outcome and treatment are required (flags or config file)")
        spec = DesignSpec(outcome=args.outcome, treatments=_split_items(args.treatment))
    if args.outcome:
        spec.outcome = args.outcome
    if args.treatment:
        spec.treatments = _split_items(args.treatment)
    if args.covariates:
        spec.covariates = _split_items(args.covariates)
    if args.derived:
        spec.derived = _split_items(args.derived)
    if args.weights:
        spec.weights = args.weights
    if args.baseline:
        spec.baseline = tuple(p.strip() for p in args.baseline.split(","))
    if args.effect_interactions:
        items = _split_items(args.effect_interactions)
        spec.effect_interactions = spec.covariates if items == ["all"] else items
    return spec


def _spec_dict(spec: DesignSpec) -> dict:
    return {
        "outcome": spec.outcome,
        "treatment": spec.treatments,
        "covariates": spec.covariates,
        "derived": spec.derived,
        "weights": spec.weights,
        "baseline": list(spec.baseline) if spec.baseline else None,
        "effect_interactions": spec.effect_interactions,
    }


def _log_grid(args):
    if args.grid is None:
        return tuning.COARSE_LOG_GRID
    parts = args.grid.split(":")
    if len(parts) != 3:
        raise ConfigError("--grid wants lo:hi:count, e.g. -15:10:26")
    try:
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as exc:
        raise ConfigError(f"bad --grid value: {exc}") from None
    if count < 1 or hi < lo:
        raise ConfigError("--grid wants lo <= hi and count >= 1")
    return tuple(np.linspace(lo, hi, count).tolist())


# ---------------------------------------------------------------------------
# fit


def _coefficient_rows(fit: svm.SvmFit, design) -> list[dict]:
    rows = [
        {
            "block": "intercept",
            "name": "(intercept)",
            "kind": "intercept",
            "coef": fit.intercept,
            "coef_scaled": None,
            "coef_pp": None,
        }
    ]
    for j, meta in enumerate(design.effect_cols):
        rows.append(
            {
                "block": "effect",
                "name": meta.name,
                "kind": meta.kind,
                "coef": fit.effect_coefs[j],
                "coef_scaled": fit.effect_coefs_scaled[j],
                "coef_pp": 50.0 * fit.effect_coefs[j],
            }
        )
    for j, meta in enumerate(design.adjust_cols):
        rows.append(
            {
                "block": "adjust",
                "name": meta.name,
                "kind": meta.kind,
                "coef": fit.adjust_coefs[j],
                "coef_scaled": fit.adjust_coefs_scaled[j],
                "coef_pp": 50.0 * fit.adjust_coefs[j],
            }
        )
    return rows


_COEF_FIELDS = ["block", "name", "kind", "coef", "coef_scaled", "coef_pp"]
_TRACE_FIELDS = ["round", "lam_effect", "lam_adjust", "n_nonzero", "active_size", "gcv"]


def cmd_fit(args) -> int:
    spec = _design_spec(args)
    grid = _log_grid(args)  # validate configuration before touching the data
    table = load_table(args.data)
    design = build_design(table, spec)
    result = tuning.search(
        design,
        log_grid=grid,
        precision=args.precision,
        backend=args.backend,
        keep_trace=args.trace,
    )
    best = result.best
    fit = best.fit

    os.makedirs(args.out, exist_ok=True)
    extra = {"lam_effect": best.lam_effect, "lam_adjust": best.lam_adjust, "gcv": best.gcv}
    _atomic_write(os.path.join(args.out, "fit.json"), svm.fit_to_json(fit, design, extra) + "\n")

    rows = _coefficient_rows(fit, design)
    _write_csv(os.path.join(args.out, "coefficients.csv"), _COEF_FIELDS, rows, comment=PP_NOTE)
    nonzero = [r for r in rows if r["block"] == "intercept" or r["coef_scaled"] != 0.0]
    _write_csv(
        os.path.join(args.out, "coefficients_nonzero.csv"), _COEF_FIELDS, nonzero, comment=PP_NOTE
    )
    if args.trace:
        _write_csv(os.path.join(args.out, "trace.csv"), _TRACE_FIELDS, result.trace)

    settings = {
        "data": os.path.abspath(args.data),
        "data_sha256": _sha256_file(args.data),
        "design": _spec_dict(spec),
        "grid": list(grid),
        "precision": args.precision,
        "backend": args.backend or DEFAULT_BACKEND,
        "seed": None,
    }
    manifest = _manifest(
        "fit",
        settings,
        selected={
            "lam_effect": best.lam_effect,
            "lam_adjust": best.lam_adjust,
            "log_lam_effect": float(np.log(best.lam_effect)),
            "log_lam_adjust": float(np.log(best.lam_adjust)),
            "n_nonzero": best.n_nonzero,
            "active_size": best.active_size,
            "gcv": best.gcv,
        },
        fit_diagnostics={
            "converged": fit.converged,
            "oscillated": fit.oscillated,
            "iterations": fit.iterations,
            "n_fits_in_search": result.n_fits,
            "n_nonzero_effect": fit.n_nonzero_effect,
        },
        n_units=design.n_units,
        dropped_columns=[list(d) for d in design.dropped],
    )
    _write_json(os.path.join(args.out, "manifest.json"), manifest)
    logger.info(
        "fit: n=%d, lam_effect=%.6g, lam_adjust=%.6g, l=%d, a=%d, gcv=%.6g",
        design.n_units,
        best.lam_effect,
        best.lam_adjust,
        best.n_nonzero,
        best.active_size,
        best.gcv,
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# effects


def _check_fit_schema(design, effect_cols, adjust_cols) -> None:
    want_e = [m.name for m in design.effect_cols]
    got_e = [m.name for m in effect_cols]
    want_a = [m.name for m in design.adjust_cols]
    got_a = [m.name for m in adjust_cols]
    if want_e != got_e or want_a != got_a:
        raise DataError(
            "fit does not match the data schema: "
            f"fit effect columns {got_e[:5]}..., data {want_e[:5]}...; "
            f"fit adjustment columns {got_a[:5]}..., data {want_a[:5]}..."
        )


def cmd_effects(args) -> int:
    spec = _design_spec(args)
    table = load_table(args.data)
    design = build_design(table, spec)
    try:
        with open(args.fit) as fh:
            fit, effect_cols, adjust_cols, _schema = svm.fit_from_json(fh.read())
    except OSError as exc:
        raise DataError(f"cannot read fit file: {exc}") from None
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"malformed fit file: {exc}") from None
    if effect_cols or adjust_cols:
        _check_fit_schema(design, effect_cols, adjust_cols)
    elif design.n_effect != fit.effect_coefs.shape[0] or design.n_adjust != fit.adjust_coefs.shape[0]:
        raise DataError("fit does not match the data schema: coefficient counts differ")

    ranked = effects.rank_treatments(fit, design)
    label = args.treatment_label or ranked[0].treatment
    eff = effects.estimate(fit, design, label)
    extremes = effects.group_extremes(fit, design, args.extremes, label)

    os.makedirs(args.out, exist_ok=True)
    _write_csv(
        os.path.join(args.out, "ranked_treatments.csv"),
        ["rank", "treatment", "ate_pp", "coef_nonzero"],
        [
            {
                "rank": i + 1,
                "treatment": r.treatment,
                "ate_pp": 100.0 * r.ate,
                "coef_nonzero": r.coef_nonzero,
            }
            for i, r in enumerate(ranked)
        ],
        comment=PP_NOTE,
    )
    _write_csv(
        os.path.join(args.out, "unit_cates.csv"),
        ["unit", "weight", "cte", "cate_pp"],
        [
            {
                "unit": i,
                "weight": design.weights[i],
                "cte": eff.cte[i],
                "cate_pp": 100.0 * eff.cate[i],
            }
            for i in range(design.n_units)
        ],
        comment=PP_NOTE,
    )
    covariate_names = [m.name for m in design.adjust_cols if m.kind == "main"]
    extreme_rows = []
    for group, units in (("top", extremes.top), ("bottom", extremes.bottom)):
        for pos, u in enumerate(units):
            row = {
                "group": group,
                "rank": pos + 1,
                "unit": u.index,
                "cate_pp": 100.0 * u.cate,
                "weight": u.weight,
            }
            row.update({name: u.covariates.get(name) for name in covariate_names})
            extreme_rows.append(row)
    _write_csv(
        os.path.join(args.out, "group_extremes.csv"),
        ["group", "rank", "unit", "cate_pp", "weight"] + covariate_names,
        extreme_rows,
        comment=PP_NOTE,
    )

    settings = {
        "data": os.path.abspath(args.data),
        "data_sha256": _sha256_file(args.data),
        "fit": os.path.abspath(args.fit),
        "fit_sha256": _sha256_file(args.fit),
        "design": _spec_dict(spec),
        "treatment_label": label,
        "extremes": args.extremes,
        "seed": None,
    }
    summary = {
        "treatment": label,
        "ate_pp": 100.0 * eff.ate,
        "ranked": [
            {"treatment": r.treatment, "ate_pp": 100.0 * r.ate, "coef_nonzero": r.coef_nonzero}
            for r in ranked
        ],
        "n_units": design.n_units,
        "n_nonzero": fit.n_nonzero,
    }
    _write_json(os.path.join(args.out, "effects_summary.json"), summary)
    _write_json(os.path.join(args.out, "manifest.json"), _manifest("effects", settings))
    logger.info("effects: treatment %s, ATE %.3f pp", label, 100.0 * eff.ate)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate / payoff


_FDR_FIELDS = ["scenario", "n", "mode", "fdr", "dr", "replicates_used"]
_PAYOFF_FIELDS = ["scenario", "n", "method", "payoff_pct", "replicates_used"]
_CURVE_FIELDS = ["scenario", "n", "method", "percentile", "benefit", "harm", "net"]


def _scenario_kind(raw: str) -> str:
    kind = _SCENARIO_ALIASES.get(raw, raw)
    if kind not in simulate.SCENARIO_KINDS:
        raise ConfigError(
            f"unknown scenario '{raw}' (want one of {', '.join(simulate.SCENARIO_KINDS)})"
        )
    return kind


def _parse_sizes(raw: str) -> tuple[int, ...]:
    try:
        sizes = tuple(int(p) for p in raw.split(",") if p.strip())
    except ValueError as exc:
        raise ConfigError(f"bad --sizes value: {exc}") from None
    if not sizes or any(s < 50 for s in sizes):
        raise ConfigError("--sizes wants a comma list of integers >= 50")
    return sizes


def _run_simulation(args, kind: str) -> int:
    sizes = _parse_sizes(args.sizes)
    if args.replicates < 1:
        raise ConfigError("--replicates must be >= 1")
    if args.eval_n < 1:
        raise ConfigError("--eval-n must be >= 1")
    if args.budget is not None and args.budget < 0:
        raise ConfigError("--budget must be >= 0")
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    notes = []
    outside = [s for s in sizes if s < 250 or s > 5000]
    if outside:
        note = f"sizes {outside} are outside the studied range [250, 5000]"
        notes.append(note)
        logger.info("%s; proceeding anyway", note)
    settings = simulate.MonteCarloSettings(
        scenario=kind,
        sizes=sizes,
        replicates=args.replicates,
        seed=args.seed,
        eval_n=args.eval_n,
        budget=args.budget,
        jobs=args.jobs,
        backend=args.backend,
    )
    outcome = simulate.run_monte_carlo(settings)

    os.makedirs(args.out, exist_ok=True)
    _write_csv(os.path.join(args.out, "fdr_dr.csv"), _FDR_FIELDS, outcome.fdr_dr_rows)
    _write_csv(os.path.join(args.out, "payoff.csv"), _PAYOFF_FIELDS, outcome.payoff_rows)
    _write_csv(os.path.join(args.out, "curves.csv"), _CURVE_FIELDS, outcome.curve_rows)

    scenario = outcome.scenario
    truth = scenario.truth
    scenario_info = {
        "kind": scenario.kind,
        "slope_a": scenario.slope,
        "offset_b": scenario.offset,
        "target_effects_pp": list(scenario.target_effects_pp),
        "clamp_fraction": truth.clamp_fraction,
        "mean_probability": truth.mean_probability,
    }
    if truth.ates is not None:
        scenario_info["leading_ates_pp"] = [100.0 * v for v in truth.ates[:3]]
        scenario_info["negligible_max_pp"] = truth.negligible_max_pp
        scenario_info["largest_arm"] = truth.largest
    if truth.population_ate is not None:
        scenario_info["population_ate_pp"] = 100.0 * truth.population_ate
        scenario_info["frac_positive_cate"] = truth.frac_positive_cate

    settings_doc = {
        "scenario": kind,
        "sizes": list(sizes),
        "replicates": args.replicates,
        "seed": args.seed,
        "eval_n": args.eval_n,
        "budget": args.budget,
        "backend": args.backend or DEFAULT_BACKEND,
    }
    manifest = _manifest(
        "simulate",
        settings_doc,
        jobs=args.jobs,
        scenario_info=scenario_info,
        failures={str(k): v for k, v in outcome.failures.items()},
        failure_messages=outcome.failure_messages[:20],
        notes=notes,
    )
    _write_json(os.path.join(args.out, "manifest.json"), manifest)

    total = len(outcome.records)
    failed = sum(outcome.failures.values())
    if total and failed / total > FAILURE_EXIT_FRACTION:
        logger.error("systematic replicate failure: %d of %d replicates failed", failed, total)
        return EXIT_TUNING
    return EXIT_OK


def cmd_simulate(args) -> int:
    return _run_simulation(args, _scenario_kind(args.scenario))


def cmd_payoff(args) -> int:
    return _run_simulation(args, "scenario-2")


# ---------------------------------------------------------------------------
# Argument parsing


def _add_design_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="input CSV with a header row")
    p.add_argument("--config", help="key=value config file with column roles")
    p.add_argument("--outcome", help="binary outcome column (overrides config)")
    p.add_argument(
        "--treatment",
        action="append",
        default=[],
        help="treatment column; repeat or comma-separate for multi-factor designs",
    )
    p.add_argument(
        "--covariates", action="append", default=[], help="covariate columns (comma list)"
    )
    p.add_argument(
        "--derived",
        action="append",
        default=[],
        help="derived adjustment terms: square:<col> or interact:<a>:<b>",
    )
    p.add_argument("--weights", help="sampling weight column")
    p.add_argument("--baseline", help="baseline treatment combination (comma list of levels)")
    p.add_argument(
        "--effect-interactions",
        action="append",
        default=[],
        help="covariates interacting with a binary treatment, or 'all'",
    )


def _add_tuning_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--grid", help="coarse log-penalty grid as lo:hi:count (default -15:10:26)")
    p.add_argument(
        "--precision",
        type=float,
        default=tuning.DEFAULT_PRECISION,
        help="line-search refinement precision on the log-penalty scale",
    )
    p.add_argument("--backend", choices=("python", "compiled"), help="force a solver backend")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hetsvm",
        description="Sparse hinge-loss SVM for heterogeneous treatment effects",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="tune penalties and fit the model from a CSV")
    _add_design_flags(p_fit)
    _add_tuning_flags(p_fit)
    p_fit.add_argument("--out", required=True, help="output directory")
    p_fit.add_argument(
        "--trace", action="store_true", help="also write trace.csv with every penalty pair visited"
    )
    p_fit.set_defaults(handler=cmd_fit)

    p_eff = sub.add_parser("effects", help="effect tables from a saved fit")
    _add_design_flags(p_eff)
    p_eff.add_argument("--fit", required=True, help="fit.json produced by the fit command")
    p_eff.add_argument("--out", required=True, help="output directory")
    p_eff.add_argument(
        "--treatment-label", help="treatment to profile (default: highest ranked ATE)"
    )
    p_eff.add_argument(
        "--extremes", type=int, default=10, help="units per extreme group (default 10)"
    )
    p_eff.set_defaults(handler=cmd_effects)

    for name, helptext in (
        ("simulate", "run the Monte Carlo study"),
        ("payoff", "run the scenario-2 treatment-rule payoff study"),
    ):
        p_sim = sub.add_parser(name, help=helptext)
        if name == "simulate":
            p_sim.add_argument(
                "--scenario",
                required=True,
                help="scenario-1-correct, scenario-1-misspecified or scenario-2 (aliases 1, 1m, 2)",
            )
        p_sim.add_argument("--sizes", default="250,5000", help="comma list of sample sizes")
        p_sim.add_argument("--replicates", type=int, default=100)
        p_sim.add_argument("--seed", type=int, required=True)
        p_sim.add_argument("--eval-n", type=int, default=2000, help="evaluation sample size")
        p_sim.add_argument("--budget", type=int, default=None, help="max units treated (payoff)")
        p_sim.add_argument("--jobs", type=int, default=1, help="worker process cap")
        p_sim.add_argument("--backend", choices=("python", "compiled"))
        p_sim.add_argument("--out", required=True, help="output directory")
        p_sim.set_defaults(handler=cmd_simulate if name == "simulate" else cmd_payoff)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, NotEstimableError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TuningError, CalibrationError, DegenerateFitError) as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return EXIT_TUNING


if __name__ == "__main__":
    sys.exit(main())
