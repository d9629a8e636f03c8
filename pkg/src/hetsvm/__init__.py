"""Sparse squared-hinge SVM for heterogeneous treatment effects.

Fits a linear support vector machine with squared hinge loss and separate
L1 penalties on the causal (treatment/interaction) and adjustment
(covariate) coefficient blocks, selects the two penalties by generalized
cross-validation, and turns fitted margins into conditional and average
treatment effect estimates.  A Monte Carlo harness measures discovery
rates and treatment-rule payoffs on synthetic designs; the ``hetsvm``
command drives everything from CSV files.
"""

from .design import (
    CausalDesign,
    ColumnMeta,
    DesignSpec,
    FactorialSchema,
    InteractionSchema,
    build_design,
    build_interactions,
    encode_factorial,
    load_table,
    parse_config,
)
from .effects import (
    GroupExtremes,
    RankedTreatment,
    TreatmentEffects,
    ate,
    cate,
    cte,
    estimate,
    group_extremes,
    rank_treatments,
)
from .errors import (
    CalibrationError,
    ConfigError,
    DataError,
    DegenerateFitError,
    HetsvmError,
    NotEstimableError,
    TuningError,
)
from .lasso import DEFAULT_BACKEND, LassoProblem, LassoSolution, available_backends, solve
from .simulate import (
    MonteCarloSettings,
    SimOutcome,
    SimScenario,
    fdr_dr,
    gen_scenario_one,
    gen_scenario_two,
    make_scenario,
    payoff_eval,
    run_monte_carlo,
)
from .svm import PenaltyPair, SvmFit, classify, fit, fit_from_json, fit_to_json, predict_margin
from .tuning import SearchResult, gcv, search

__version__ = "0.1.0"

__all__ = [
    "CausalDesign",
    "ColumnMeta",
    "DesignSpec",
    "FactorialSchema",
    "InteractionSchema",
    "build_design",
    "build_interactions",
    "encode_factorial",
    "load_table",
    "parse_config",
    "GroupExtremes",
    "RankedTreatment",
    "TreatmentEffects",
    "ate",
    "cate",
    "cte",
    "estimate",
    "group_extremes",
    "rank_treatments",
    "CalibrationError",
    "ConfigError",
    "DataError",
    "DegenerateFitError",
    "HetsvmError",
    "NotEstimableError",
    "TuningError",
    "DEFAULT_BACKEND",
    "LassoProblem",
    "LassoSolution",
    "available_backends",
    "solve",
    "MonteCarloSettings",
    "SimOutcome",
    "SimScenario",
    "fdr_dr",
    "gen_scenario_one",
    "gen_scenario_two",
    "make_scenario",
    "payoff_eval",
    "run_monte_carlo",
    "PenaltyPair",
    "SvmFit",
    "classify",
    "fit",
    "fit_from_json",
    "fit_to_json",
    "predict_margin",
    "SearchResult",
    "gcv",
    "search",
    "__version__",
]
