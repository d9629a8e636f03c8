"""Penalty selection by generalized cross-validation.

The GCV score of a fit is

    V = sum_i w_i max(0, 1 - y_i W_i)^2 / (n (1 - l/a)^2)

where l counts nonzero coefficients (the intercept is free) and a is the
margin active set size; fits with l >= a score +infinity.

The two penalties are searched on a natural-log grid by alternating line
search: hold the causal-block penalty at the top of the grid, scan the
adjustment penalty, then scan the causal penalty, and repeat until the
incumbent stops moving.  The bracket around the incumbent is then halved
repeatedly, re-running the alternation at each resolution, until the log
spacing drops below the requested precision.  Ties prefer the larger
penalty.  Every fit is cached by its log-penalty pair and warm-started from
the previous point in scan order.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import svm
from .design import CausalDesign
from .errors import DegenerateFitError, TuningError

logger = logging.getLogger(__name__)

COARSE_LOG_GRID = tuple(float(k) for k in range(-15, 11))
DEFAULT_PRECISION = 1e-4
MAX_ROUNDS = 50
_KEY_DECIMALS = 9


def gcv(fit: svm.SvmFit, design: CausalDesign) -> float:
    """GCV score of a fit on the design it was fit to."""
    n_nonzero = fit.n_nonzero
    active_size = fit.active_size
    if n_nonzero >= active_size:
        return math.inf
    hinge = svm.hinge_objective(design.y, fit.margins, design.weights)
    return hinge / (design.n_units * (1.0 - n_nonzero / active_size) ** 2)


@dataclass
class GcvRecord:
    """One evaluated penalty pair."""

    lam_effect: float
    lam_adjust: float
    gcv: float
    n_nonzero: int
    active_size: int
    fit: svm.SvmFit | None


@dataclass
class SearchResult:
    best: GcvRecord
    n_fits: int
    trace: list[dict] = field(default_factory=list)


class _Searcher:
    def __init__(self, design, log_grid, precision, backend, trace):
        self.design = design
        self.stacked = design.stacked()
        self.grid = sorted({float(v) for v in log_grid}, reverse=True)
        if not self.grid:
            raise TuningError("empty penalty grid")
        self.lo = self.grid[-1]
        self.hi = self.grid[0]
        self.precision = precision
        self.backend = backend
        self.trace = trace
        self.cache: dict[tuple[float, float], GcvRecord] = {}
        self.n_fits = 0
        self.round = 0
        self.accepted: list[float] = []

    @staticmethod
    def _key(log_e, log_a):
        return (round(log_e, _KEY_DECIMALS), round(log_a, _KEY_DECIMALS))

    def evaluate(self, log_e, log_a, warm: svm.SvmFit | None) -> GcvRecord:
        key = self._key(log_e, log_a)
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        penalties = svm.PenaltyPair(math.exp(log_e), math.exp(log_a))
        try:
            f = svm.fit(
                self.design,
                penalties,
                init=warm,
                backend=self.backend,
                _stacked=self.stacked,
            )
            record = GcvRecord(
                lam_effect=penalties.lam_effect,
                lam_adjust=penalties.lam_adjust,
                gcv=gcv(f, self.design),
                n_nonzero=f.n_nonzero,
                active_size=f.active_size,
                fit=f,
            )
        except DegenerateFitError:
            record = GcvRecord(
                lam_effect=penalties.lam_effect,
                lam_adjust=penalties.lam_adjust,
                gcv=math.inf,
                n_nonzero=0,
                active_size=0,
                fit=None,
            )
        self.n_fits += 1
        self.cache[key] = record
        if self.trace is not None:
            self.trace.append(
                {
                    "round": self.round,
                    "lam_effect": record.lam_effect,
                    "lam_adjust": record.lam_adjust,
                    "n_nonzero": record.n_nonzero,
                    "active_size": record.active_size,
                    "gcv": record.gcv,
                }
            )
        return record

    def scan(self, axis, values, log_e, log_a):
        """Evaluate one axis over ``values`` (descending); return best point.

        The incumbent point competes too; strict improvement moves it, so
        equal scores resolve toward the larger penalty.
        """
        self.round += 1
        best_point = (log_e, log_a)
        best_record = self.evaluate(log_e, log_a, None)
        warm = best_record.fit
        for v in sorted(values, reverse=True):
            point = (v, log_a) if axis == 0 else (log_e, v)
            record = self.evaluate(point[0], point[1], warm)
            if record.fit is not None:
                warm = record.fit
            if record.gcv < best_record.gcv:
                best_record = record
                best_point = point
        return best_point, best_record

    def alternate(self, log_e, log_a, values_of):
        """Alternate axis scans until the incumbent point repeats."""
        record = None
        for _ in range(MAX_ROUNDS):
            start = (log_e, log_a)
            (log_e, log_a), record = self.scan(1, values_of(1, log_e, log_a), log_e, log_a)
            (log_e, log_a), record = self.scan(0, values_of(0, log_e, log_a), log_e, log_a)
            self._accept(record)
            if (log_e, log_a) == start:
                break
        else:
            logger.warning("alternating search did not settle within %d rounds", MAX_ROUNDS)
        return log_e, log_a, record

    def _accept(self, record):
        if self.accepted:
            assert record.gcv <= self.accepted[-1] + 1e-12, "incumbent GCV increased"
        self.accepted.append(record.gcv)

    def run(self) -> SearchResult:
        coarse = lambda axis, log_e, log_a: self.grid
        log_e, log_a, record = self.alternate(self.hi, self.hi, coarse)
        if record is None or not math.isfinite(record.gcv):
            raise TuningError("every candidate penalty pair was degenerate")

        gaps = [a - b for a, b in zip(self.grid[:-1], self.grid[1:])]
        radius = max(gaps) if gaps else 0.0
        while radius >= self.precision and radius > 0.0:
            def refine(axis, log_e, log_a):
                center = log_e if axis == 0 else log_a
                offsets = (-radius, -radius / 2, 0.0, radius / 2, radius)
                return [min(self.hi, max(self.lo, center + o)) for o in offsets]

            log_e, log_a, record = self.alternate(log_e, log_a, refine)
            radius /= 2.0

        best = self.cache[self._key(log_e, log_a)]
        if best.fit is None or not math.isfinite(best.gcv):
            raise TuningError("selected penalty pair is degenerate")
        return SearchResult(best=best, n_fits=self.n_fits, trace=self.trace or [])


def search(
    design: CausalDesign,
    log_grid=COARSE_LOG_GRID,
    precision: float = DEFAULT_PRECISION,
    backend: str | None = None,
    keep_trace: bool = False,
) -> SearchResult:
    """Select the penalty pair minimizing GCV.  See the module docstring."""
    trace = [] if keep_trace else None
    searcher = _Searcher(design, log_grid, precision, backend, trace)
    return searcher.run()
