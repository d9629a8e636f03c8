"""Design construction: outcomes, treatment columns, adjustment columns.

Raw data arrives as a column-named table (dict of equal-length arrays,
typically from ``load_table``).  A parsed :class:`DesignSpec` says which
columns play which role, and :func:`build_design` assembles the pieces into a
:class:`CausalDesign`:

* outcome recoded to +/-1,
* a causal block ``X_effect`` (factorial combination indicators, or a binary
  treatment plus treatment-covariate interactions),
* an adjustment block ``X_adjust`` (standardized covariate mains plus
  declared squares / pairwise interactions),
* sampling weights normalized to mean one.

Standardization uses the population convention (divide by sqrt of the mean
squared deviation) and every center/scale is recorded so fitted coefficients
can be mapped back to the original scale.  Zero-variance and exactly
duplicated adjustment columns are dropped with a warning rather than an
error, since factorial designs are often collinear by construction.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

STD_TOL = 1e-10


@dataclass
class ColumnMeta:
    """Bookkeeping for one design column.

    ``kind`` is one of ``indicator`` (factorial combination), ``treatment``
    (binary treatment main effect), ``interaction`` (treatment x covariate),
    ``main`` (standardized covariate), ``derived`` (square or covariate
    product built from standardized mains) or ``constant``.  ``center`` and
    ``scale`` record the standardization applied to ``main`` columns; other
    kinds keep the identity transform.
    """

    name: str
    kind: str
    center: float = 0.0
    scale: float = 1.0


@dataclass
class FactorialSchema:
    """Treatment layout for factorial designs.

    ``assignment[i]`` indexes into ``labels`` for the combination unit ``i``
    received, with -1 meaning the baseline (control) combination.
    """

    factors: list[str]
    baseline: tuple[str, ...]
    labels: list[str]
    combos: list[tuple[str, ...]]
    assignment: np.ndarray


@dataclass
class InteractionSchema:
    """Treatment layout for a binary treatment with covariate interactions.

    Keeps the standardized covariates used to build the interaction columns
    so counterfactual rows can be recomputed for any unit.
    """

    treatment: str
    covariate_names: list[str]
    covariates_std: np.ndarray
    treated: np.ndarray


@dataclass
class CausalDesign:
    """Assembled estimation inputs for the sparse hinge-loss SVM."""

    y: np.ndarray
    X_effect: np.ndarray
    X_adjust: np.ndarray
    weights: np.ndarray
    effect_cols: list[ColumnMeta]
    adjust_cols: list[ColumnMeta]
    schema: FactorialSchema | InteractionSchema | None = None
    dropped: list[tuple[str, str]] = field(default_factory=list)

    @property
    def n_units(self) -> int:
        return self.y.shape[0]

    @property
    def n_effect(self) -> int:
        return self.X_effect.shape[1]

    @property
    def n_adjust(self) -> int:
        return self.X_adjust.shape[1]

    def stacked(self) -> np.ndarray:
        """Causal and adjustment blocks side by side, (n, Le + La)."""
        return np.hstack([self.X_effect, self.X_adjust])

    def validate(self) -> None:
        n = self.n_units
        if self.X_effect.shape[0] != n or self.X_adjust.shape[0] != n:
            raise DataError("design blocks disagree on the number of rows")
        if self.weights.shape[0] != n:
            raise DataError("weights length does not match the design")
        if not np.all(np.isin(self.y, (-1.0, 1.0))):
            raise DataError("outcome must be coded +/-1")
        if abs(self.weights.mean() - 1.0) > 1e-12:
            raise DataError("weights are not normalized to mean one")
        if len(self.effect_cols) != self.n_effect:
            raise DataError("effect column metadata out of sync")
        if len(self.adjust_cols) != self.n_adjust:
            raise DataError("adjustment column metadata out of sync")


def normalize_weights(w) -> np.ndarray:
    """Return weights rescaled to mean exactly one.

    Raises DataError for negative, non-finite or all-zero weights.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1:
        raise DataError("weights must be one-dimensional")
    if not np.all(np.isfinite(w)):
        raise DataError("weights contain non-finite values")
    if w.size == 0 or np.any(w <= 0):
        raise DataError("weights must be strictly positive")
    return w / w.mean()


def standardize_column(x) -> tuple[np.ndarray, float, float]:
    """Center and scale one column to mean 0, population sd 1.

    Returns (standardized, center, scale).  A zero-variance column comes back
    unscaled with scale 0.0 so the caller can decide to drop it.
    """
    x = np.asarray(x, dtype=np.float64)
    center = float(x.mean())
    scale = float(np.sqrt(np.mean((x - center) ** 2)))
    if scale <= STD_TOL * max(1.0, abs(center)):
        return np.zeros_like(x), center, 0.0
    return (x - center) / scale, center, scale


def destandardize_column(x_std, center: float, scale: float) -> np.ndarray:
    """Invert standardize_column."""
    return np.asarray(x_std, dtype=np.float64) * scale + center


def encode_factorial(
    table: dict[str, np.ndarray],
    factors: list[str],
    baseline: tuple[str, ...] | None = None,
) -> tuple[np.ndarray, FactorialSchema, list[ColumnMeta]]:
    """Encode observed treatment combinations as indicator columns.

    One column per observed non-baseline combination of the factor levels;
    the baseline combination is represented by an all-zero row.  Column order
    is deterministic: combinations sort by their level tuples.  Unobserved
    combinations get no column.
    """
    if not factors:
        raise ConfigError("factorial encoding needs at least one treatment column")
    levels = []
    for name in factors:
        if name not in table:
            raise DataError(f"treatment column '{name}' not in data")
        levels.append(np.array([str(v) for v in table[name]], dtype=object))
    n = levels[0].shape[0]
    rows = list(zip(*[col.tolist() for col in levels]))
    observed = sorted(set(rows))
    if baseline is None:
        baseline = tuple(sorted({r[k] for r in observed})[0] for k in range(len(factors)))
    else:
        baseline = tuple(str(v) for v in baseline)
        if len(baseline) != len(factors):
            raise ConfigError("baseline must give one level per treatment column")
    if baseline not in set(rows):
        raise DataError(f"baseline combination {baseline} has no units in the data")

    combos = [c for c in observed if c != baseline]
    labels = ["&".join(f"{f}={v}" for f, v in zip(factors, combo)) for combo in combos]
    index = {combo: j for j, combo in enumerate(combos)}
    Z = np.zeros((n, len(combos)))
    assignment = np.full(n, -1, dtype=np.int64)
    for i, row in enumerate(rows):
        j = index.get(row)
        if j is not None:
            Z[i, j] = 1.0
            assignment[i] = j
    schema = FactorialSchema(
        factors=list(factors),
        baseline=baseline,
        labels=labels,
        combos=combos,
        assignment=assignment,
    )
    meta = [ColumnMeta(name=lab, kind="indicator") for lab in labels]
    return Z, schema, meta


def build_interactions(
    treated,
    covariates_std,
    covariate_names: list[str],
    treatment_name: str = "treatment",
) -> tuple[np.ndarray, InteractionSchema, list[ColumnMeta]]:
    """Causal block for a binary treatment: main effect plus interactions.

    ``covariates_std`` must already be on the standardized scale; the
    interaction columns are the treatment indicator times each standardized
    covariate, so counterfactual rows can be rebuilt exactly.
    """
    treated = np.asarray(treated, dtype=np.float64)
    covariates_std = np.asarray(covariates_std, dtype=np.float64)
    if not np.all(np.isin(treated, (0.0, 1.0))):
        raise DataError(f"treatment column '{treatment_name}' must be binary 0/1")
    if covariates_std.shape[0] != treated.shape[0]:
        raise DataError("treatment and covariates disagree on the number of rows")
    Z = np.column_stack([treated, treated[:, None] * covariates_std])
    names = [treatment_name] + [f"{treatment_name}:{c}" for c in covariate_names]
    meta = [ColumnMeta(name=names[0], kind="treatment")]
    meta += [ColumnMeta(name=nm, kind="interaction") for nm in names[1:]]
    schema = InteractionSchema(
        treatment=treatment_name,
        covariate_names=list(covariate_names),
        covariates_std=covariates_std,
        treated=treated,
    )
    return Z, schema, meta


@dataclass
class DesignSpec:
    """Parsed key=value run configuration."""

    outcome: str
    treatments: list[str]
    covariates: list[str] = field(default_factory=list)
    derived: list[str] = field(default_factory=list)
    weights: str | None = None
    baseline: tuple[str, ...] | None = None
    effect_interactions: list[str] | None = None


def parse_config(text: str) -> DesignSpec:
    """Parse a flat key=value configuration.

    Lines are ``key=value``; blank lines and ``#`` comments are ignored.
    ``treatment``, ``covariates`` and ``derived`` accumulate across repeats
    and accept comma-separated values.  ``effect_interactions`` switches the
    causal block from factorial indicators to treatment-covariate
    interactions; its value is a covariate list or ``all``.
    """
    values: dict[str, list[str]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got '{raw.strip()}'")
        key, value = line.split("=", 1)
        values.setdefault(key.strip(), []).append(value.strip())

    def single(key, required=False):
        got = values.pop(key, [])
        if len(got) > 1:
            raise ConfigError(f"key '{key}' given more than once")
        if not got:
            if required:
                raise ConfigError(f"missing required key '{key}'")
            return None
        return got[0]

    def multi(key):
        out = []
        for chunk in values.pop(key, []):
            out.extend(p.strip() for p in chunk.split(",") if p.strip())
        return out

    outcome = single("outcome", required=True)
    treatments = multi("treatment")
    if not treatments:
        raise ConfigError("missing required key 'treatment'")
    covariates = multi("covariates")
    derived = multi("derived")
    weights = single("weights")
    baseline_raw = single("baseline")
    baseline = tuple(p.strip() for p in baseline_raw.split(",")) if baseline_raw else None
    interactions_raw = multi("effect_interactions")
    effect_interactions: list[str] | None = None
    if interactions_raw:
        effect_interactions = covariates if interactions_raw == ["all"] else interactions_raw
    if values:
        raise ConfigError(f"unknown configuration keys: {sorted(values)}")
    for recipe in derived:
        parts = recipe.split(":")
        if parts[0] == "square" and len(parts) == 2:
            continue
        if parts[0] == "interact" and len(parts) == 3:
            continue
        raise ConfigError(
            f"bad derived term '{recipe}' (want square:<col> or interact:<col>:<col>)"
        )
    return DesignSpec(
        outcome=outcome,
        treatments=treatments,
        covariates=covariates,
        derived=derived,
        weights=weights,
        baseline=baseline,
        effect_interactions=effect_interactions,
    )


def load_table(path) -> dict[str, np.ndarray]:
    """Read a CSV with a header row into a dict of object-dtype columns."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read data file: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(set(header)) != len(header):
            raise DataError(f"{path}: duplicate column names in header")
        rows = list(reader)
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise DataError(f"{path}: row {i + 2} has {len(row)} fields, expected {len(header)}")
    table = {}
    for j, name in enumerate(header):
        table[name] = np.array([row[j] for row in rows], dtype=object)
    return table


def numeric_column(table: dict[str, np.ndarray], name: str) -> np.ndarray:
    """Fetch a column and coerce it to float64."""
    if name not in table:
        raise DataError(f"column '{name}' not in data")
    try:
        col = np.array([float(v) for v in table[name]], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise DataError(f"column '{name}' is not numeric: {exc}") from None
    if not np.all(np.isfinite(col)):
        bad = int(np.flatnonzero(~np.isfinite(col))[0])
        raise DataError(f"column '{name}' has a non-finite value at row {bad + 2}")
    return col


def _derived_column(recipe: str, mains: dict[str, np.ndarray]) -> tuple[str, np.ndarray] | None:
    parts = recipe.split(":")
    if parts[0] == "square":
        col = parts[1]
        if col not in mains:
            return None
        return f"{col}^2", mains[col] ** 2
    a, b = parts[1], parts[2]
    if a not in mains or b not in mains:
        return None
    return f"{a}:{b}", mains[a] * mains[b]


def build_design(table: dict[str, np.ndarray], spec: DesignSpec) -> CausalDesign:
    """Assemble a CausalDesign from a raw table and a parsed spec."""
    y01 = numeric_column(table, spec.outcome)
    if not np.all(np.isin(y01, (0.0, 1.0))):
        raise DataError(f"outcome '{spec.outcome}' must be binary 0/1")
    y = 2.0 * y01 - 1.0
    n = y.shape[0]
    if n == 0:
        raise DataError("data has no rows")

    if spec.weights is not None:
        weights = normalize_weights(numeric_column(table, spec.weights))
    else:
        weights = np.ones(n)

    dropped: list[tuple[str, str]] = []
    mains: dict[str, np.ndarray] = {}
    adjust_parts: list[np.ndarray] = []
    adjust_meta: list[ColumnMeta] = []
    for name in spec.covariates:
        raw = numeric_column(table, name)
        std, center, scale = standardize_column(raw)
        if scale == 0.0:
            logger.warning("dropping zero-variance covariate '%s'", name)
            dropped.append((name, "zero variance"))
            continue
        mains[name] = std
        adjust_parts.append(std)
        adjust_meta.append(ColumnMeta(name=name, kind="main", center=center, scale=scale))

    for recipe in spec.derived:
        built = _derived_column(recipe, mains)
        if built is None:
            logger.warning("skipping derived term '%s': base covariate unavailable", recipe)
            dropped.append((recipe, "base covariate unavailable"))
            continue
        name, col = built
        if np.all(col == col[0]):
            logger.warning("dropping zero-variance derived column '%s'", name)
            dropped.append((name, "zero variance"))
            continue
        adjust_parts.append(col)
        adjust_meta.append(ColumnMeta(name=name, kind="derived"))

    keep_parts: list[np.ndarray] = []
    keep_meta: list[ColumnMeta] = []
    for col, meta in zip(adjust_parts, adjust_meta):
        if any(np.array_equal(col, prev) for prev in keep_parts):
            logger.warning("dropping duplicate adjustment column '%s'", meta.name)
            dropped.append((meta.name, "duplicate"))
            continue
        keep_parts.append(col)
        keep_meta.append(meta)
    X_adjust = np.column_stack(keep_parts) if keep_parts else np.empty((n, 0))

    if spec.effect_interactions is not None:
        if len(spec.treatments) != 1:
            raise ConfigError("effect_interactions requires exactly one treatment column")
        chosen = []
        for name in spec.effect_interactions:
            if name not in mains:
                raise ConfigError(
                    f"effect_interactions references '{name}', not an available covariate"
                )
            chosen.append(name)
        treated = numeric_column(table, spec.treatments[0])
        cov_std = np.column_stack([mains[c] for c in chosen]) if chosen else np.empty((n, 0))
        X_effect, schema, effect_meta = build_interactions(
            treated, cov_std, chosen, treatment_name=spec.treatments[0]
        )
    else:
        X_effect, schema, effect_meta = encode_factorial(
            table, spec.treatments, baseline=spec.baseline
        )

    design = CausalDesign(
        y=y,
        X_effect=X_effect,
        X_adjust=X_adjust,
        weights=weights,
        effect_cols=effect_meta,
        adjust_cols=keep_meta,
        schema=schema,
        dropped=dropped,
    )
    design.validate()
    return design
