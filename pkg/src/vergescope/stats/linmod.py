"""Ordinary least squares, nested-model F tests, and backward stepwise refinement.

The F convention throughout: when comparing a nested pair inside a chain of
models, the error variance in the denominator comes from the most complete
model of the chain, F = ((R2_large - R2_small)/ddf) / ((1 - R2_complete)/df_complete).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Mapping, Sequence

import numpy as np

from ..errors import NestingError, RankDeficiencyError, VarianceShareError
from .fdist import f_sf
from .formula import ModelFormula, Term, build_design_matrix

__all__ = [
    "FitResult",
    "ModelComparison",
    "ols_fit",
    "f_test_from_r2",
    "nested_f_test",
    "stepwise_refine",
    "StepwiseTrace",
    "variance_attribution",
    "ShareDef",
]


@dataclass(frozen=True)
class FitResult:
    """A fitted linear model: coefficients plus the fit summaries the reports need."""

    formula: ModelFormula
    coefficients: dict[str, float]
    r_squared: float
    residual_df: int
    n: int
    rss: float
    tss: float

    @property
    def n_coefficients(self) -> int:
        return len(self.coefficients)

    @classmethod
    def from_summary(cls, formula: ModelFormula, r_squared: float, residual_df: int, n: int) -> "FitResult":
        """Build a summary-only result (e.g. from a published table) for comparisons."""
        return cls(formula, {}, r_squared, residual_df, n, math.nan, math.nan)


@dataclass(frozen=True)
class ModelComparison:
    smaller: FitResult
    larger: FitResult
    complete: FitResult
    delta_df: int
    f_stat: float
    p_value: float


def ols_fit(
    data: Mapping[str, Sequence],
    formula: ModelFormula | str,
    levels: Mapping[str, Sequence[str]] | None = None,
) -> FitResult:
    """Least-squares fit of ``formula`` on columnar ``data`` via QR decomposition.

    Raises RankDeficiencyError when the design matrix is singular or when
    there are no residual degrees of freedom.
    """
    if isinstance(formula, str):
        formula = ModelFormula.parse(formula)
    if formula.response not in data:
        raise RankDeficiencyError(f"response {formula.response!r} not in data")
    y = np.asarray(data[formula.response], dtype=float)
    design = build_design_matrix(data, formula, levels)
    x = design.matrix
    n, k = x.shape
    if n <= k:
        raise RankDeficiencyError(f"need more rows ({n}) than coefficients ({k})")
    q, r = np.linalg.qr(x)
    diag = np.abs(np.diag(r))
    if diag.min() <= max(n, k) * np.finfo(float).eps * diag.max():
        raise RankDeficiencyError("design matrix is rank deficient")
    beta = np.linalg.solve(r, q.T @ y)
    resid = y - x @ beta
    rss = float(resid @ resid)
    tss = float(np.sum((y - y.mean()) ** 2))
    if not formula.terms or tss <= 0.0:
        r2 = 0.0  # the intercept-only fit explains nothing by definition
    else:
        r2 = 1.0 - rss / tss
        # With an intercept column rss <= tss exactly; trim float dust at the ends.
        r2 = min(1.0, max(0.0, r2)) if -1e-9 < r2 < 1.0 + 1e-9 else r2
    coefs = dict(zip(design.column_names, (float(b) for b in beta)))
    return FitResult(formula, coefs, r2, n - k, n, rss, tss)


def f_test_from_r2(
    r2_smaller: float,
    df_smaller: int,
    r2_larger: float,
    df_larger: int,
    r2_complete: float,
    df_complete: int,
) -> tuple[int, float, float]:
    """Core F computation on (R-squared, residual df) summaries.

    Returns (delta_df, F, p). A degenerate comparison of identical summaries
    yields (0, 0.0, 1.0).
    """
    delta_df = df_smaller - df_larger
    if delta_df == 0:
        if abs(r2_larger - r2_smaller) < 1e-12:
            return 0, 0.0, 1.0
        raise NestingError("models differ in R-squared but not in residual df")
    if delta_df < 0:
        raise NestingError("smaller model must have more residual df than larger")
    if df_complete <= 0:
        raise NestingError("complete model has no residual degrees of freedom")
    num = (r2_larger - r2_smaller) / delta_df
    den = (1.0 - r2_complete) / df_complete
    f = max(0.0, num / den)
    return delta_df, f, f_sf(f, delta_df, df_complete)


def nested_f_test(smaller: FitResult, larger: FitResult, complete: FitResult) -> ModelComparison:
    """F test of the R-squared drop from ``larger`` to ``smaller``.

    Requires smaller's terms to be a subset of larger's, larger's a subset of
    complete's, and all three fitted on the same rows; the denominator uses
    the complete model's residual variance.
    """
    if smaller.n != larger.n or larger.n != complete.n:
        raise NestingError("models were fitted on different row counts")
    if not larger.formula.contains(smaller.formula):
        raise NestingError(
            f"{smaller.formula.to_string()!r} is not nested in {larger.formula.to_string()!r}"
        )
    if not complete.formula.contains(larger.formula):
        raise NestingError(
            f"{larger.formula.to_string()!r} is not nested in {complete.formula.to_string()!r}"
        )
    delta_df, f, p = f_test_from_r2(
        smaller.r_squared,
        smaller.residual_df,
        larger.r_squared,
        larger.residual_df,
        complete.r_squared,
        complete.residual_df,
    )
    return ModelComparison(smaller, larger, complete, delta_df, f, p)


def _aic(fit: FitResult) -> float:
    # R's extractAIC scale for lm: n*log(RSS/n) + 2*edf, additive constant dropped.
    return fit.n * math.log(fit.rss / fit.n) + 2.0 * fit.n_coefficients


@dataclass
class StepwiseStep:
    formula: ModelFormula
    candidates: list[dict]
    dropped: Term | None


@dataclass
class StepwiseTrace:
    criterion: str
    complete: FitResult
    steps: list[StepwiseStep] = field(default_factory=list)

    def formulas(self) -> list[ModelFormula]:
        return [s.formula for s in self.steps]


def stepwise_refine(
    data: Mapping[str, Sequence],
    complete_formula: ModelFormula | str,
    criterion: Literal["f_test", "aic"] = "f_test",
    alpha: float = 0.05,
    levels: Mapping[str, Sequence[str]] | None = None,
) -> tuple[FitResult, StepwiseTrace]:
    """Backward elimination from the complete model.

    At each step, only terms not contained in a remaining interaction may be
    dropped. Under ``f_test``, the least harmful droppable term (largest p
    against the current model, error variance from the complete model) is
    removed while its p exceeds ``alpha``. Under ``aic``, the drop that most
    lowers AIC is taken while any drop lowers it. Returns the refined fit and
    the full trace of candidate evaluations.
    """
    if isinstance(complete_formula, str):
        complete_formula = ModelFormula.parse(complete_formula)
    complete = ols_fit(data, complete_formula, levels)
    trace = StepwiseTrace(criterion, complete)
    current = complete
    while True:
        droppable = current.formula.droppable_terms()
        step = StepwiseStep(current.formula, [], None)
        trace.steps.append(step)
        if not droppable:
            return current, trace
        best: tuple[float, Term, FitResult] | None = None
        for term in droppable:
            reduced = ols_fit(data, current.formula.without(term), levels)
            if criterion == "f_test":
                cmp = nested_f_test(reduced, current, complete)
                step.candidates.append(
                    {"term": term, "r_squared": reduced.r_squared, "f": cmp.f_stat, "p": cmp.p_value}
                )
                score = cmp.p_value
                keep = best is None or score > best[0]
            else:
                aic = _aic(reduced)
                step.candidates.append({"term": term, "r_squared": reduced.r_squared, "aic": aic})
                score = aic
                keep = best is None or score < best[0]
            if keep:
                best = (score, term, reduced)
        assert best is not None
        score, term, reduced = best
        if criterion == "f_test":
            if score <= alpha:
                return current, trace
        else:
            if score >= _aic(current):
                return current, trace
        step.dropped = term
        current = reduced


@dataclass(frozen=True)
class ShareDef:
    """One variance-attribution line: (R2[hi] - R2[lo]) / R2[denominator].

    ``lo`` of None means a zero-R-squared floor, giving R2[hi]/R2[denominator].
    """

    predictor: str
    hi: str
    lo: str | None
    denominator: str


def variance_attribution(models: Mapping[str, FitResult], shares: Sequence[ShareDef]) -> dict[str, float]:
    """Explained-variance shares between named models of a refinement chain."""
    out: dict[str, float] = {}
    for s in shares:
        den = models[s.denominator].r_squared
        if den == 0.0:
            raise VarianceShareError(
                f"attribution for {s.predictor!r} undefined: model {s.denominator!r} has zero R-squared"
            )
        hi = models[s.hi].r_squared
        lo = models[s.lo].r_squared if s.lo is not None else 0.0
        out[s.predictor] = (hi - lo) / den
    return out
