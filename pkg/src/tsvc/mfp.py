"""Multivariable fractional polynomials for smooth surface fitting.

Each covariate may enter as a fractional polynomial of degree 1 or 2
with powers drawn from {-2, -1, -0.5, 0, 0.5, 1, 2, 3}, where power 0
means log(x) and a repeated power (q, q) means {x^q, x^q * log(x)}.
Covariates are processed in decreasing order of their contribution to
a full linear model; for each one a closed test chain decides between
exclusion, a linear effect, and the best degree-1 or degree-2 form,
holding all other covariates at their current forms.  Full cycles
repeat until the selected forms stabilise.

Optional interaction candidates enter the same inclusion machinery as
plain products of raw covariates, tested linear-in / linear-out.

The main consumer here is ``derive_dof_formula``, which fits a closed
form to a grid of Monte-Carlo degrees-of-freedom estimates in the
covariates (s, p, n).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from .core import Dataset, solve_least_squares
from .errors import (
    NoConvergenceError,
    NonPositiveValuesError,
    RankDeficientError,
    ValidationError,
)

FP_POWERS = (-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0)

LINEAR = (1.0,)

# Any rss below this fraction of n * mean(y^2) is numerically a perfect
# fit; likelihood-ratio statistics are clamped accordingly so that an
# exactly representable surface cannot trigger spurious rejections.
_RSS_FLOOR_RTOL = 1e-14


@dataclass(frozen=True)
class FpTerm:
    """One covariate's fractional-polynomial form.

    ``powers`` has length equal to the degree; ``shift`` is added to
    the covariate before transforming so that all values are positive.
    ``coefficients`` align with the transformed columns and are filled
    only on a final fitted surface.
    """

    covariate: int
    powers: tuple[float, ...]
    shift: float = 0.0
    coefficients: tuple[float, ...] | None = None

    @property
    def degree(self) -> int:
        return len(self.powers)


@dataclass(frozen=True)
class InteractionTerm:
    """Plain product of two or more raw covariates, linear coefficient."""

    covariates: tuple[int, ...]
    coefficient: float | None = None


@dataclass(frozen=True)
class MfpFit:
    """A fitted fractional-polynomial surface."""

    terms: tuple[FpTerm, ...]
    interactions: tuple[InteractionTerm, ...]
    intercept: float
    excluded: tuple[int, ...]
    alpha: float
    r_squared: float
    names: tuple[str, ...]

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != len(self.names):
            raise ValidationError(
                f"expected {len(self.names)} columns, got {X.shape[1]}"
            )
        out = np.full(X.shape[0], self.intercept)
        for term in self.terms:
            cols = fp_columns(X[:, term.covariate] + term.shift, term.powers)
            out += cols @ np.asarray(term.coefficients)
        for inter in self.interactions:
            out += inter.coefficient * np.prod(X[:, list(inter.covariates)], axis=1)
        return out

    def expression(self, digits: int = 6) -> str:
        """Human-readable closed form of the fitted surface."""

        def fmt(value):
            return f"{value:.{digits}g}"

        pieces = [fmt(self.intercept)]
        for term in self.terms:
            base = self.names[term.covariate]
            if term.shift:
                base = f"({base} + {fmt(term.shift)})"
            prev = None
            for power, coef in zip(term.powers, term.coefficients):
                if power == prev:
                    piece = f"{_power_expr(base, power)}*log({base})"
                else:
                    piece = _power_expr(base, power)
                prev = power
                pieces.append(f"{fmt(coef)}*{piece}" if piece != "1" else fmt(coef))
        for inter in self.interactions:
            prod = "*".join(self.names[j] for j in inter.covariates)
            pieces.append(f"{fmt(inter.coefficient)}*{prod}")
        return " + ".join(pieces).replace("+ -", "- ")

    def to_dict(self) -> dict:
        return {
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "alpha": self.alpha,
            "names": list(self.names),
            "terms": [
                {
                    "covariate": self.names[t.covariate],
                    "powers": list(t.powers),
                    "shift": t.shift,
                    "coefficients": list(t.coefficients),
                }
                for t in self.terms
            ],
            "interactions": [
                {
                    "covariates": [self.names[j] for j in i.covariates],
                    "coefficient": i.coefficient,
                }
                for i in self.interactions
            ],
            "excluded": [self.names[j] for j in self.excluded],
            "expression": self.expression(),
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def _power_expr(base: str, power: float) -> str:
    if power == 0.0:
        return f"log({base})"
    if power == 1.0:
        return base
    return f"{base}^{power:g}"


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------

def positivity_shift(x: np.ndarray) -> float:
    """Shift delta such that min(x) + delta > 0, zero when unneeded.

    Uses the smallest positive gap between adjacent distinct values as
    the margin above zero (1.0 when all values coincide).
    """
    x = np.asarray(x, dtype=float)
    lo = x.min()
    if lo > 0:
        return 0.0
    distinct = np.unique(x)
    gap = 1.0 if distinct.size < 2 else float(np.min(np.diff(distinct)))
    return gap - float(lo)


def fp_columns(x_pos: np.ndarray, powers) -> np.ndarray:
    """Transform a positive vector by a fractional-polynomial power tuple.

    Power 0 maps to log(x); a repeated power q yields the pair
    ``{x^q, x^q * log(x)}``.
    """
    x_pos = np.asarray(x_pos, dtype=float)
    if np.any(x_pos <= 0):
        raise NonPositiveValuesError("fractional polynomials need positive values")
    cols = []
    prev = None
    for power in powers:
        if power == 0.0:
            col = np.log(x_pos)
        else:
            col = x_pos ** power
        if prev is not None and power == prev:
            col = cols[-1] * np.log(x_pos)
        cols.append(col)
        prev = power
    return np.column_stack(cols)


def _fp_power_sets(degree: int):
    if degree == 1:
        return [(q,) for q in FP_POWERS]
    return [tuple(pair) for pair in
            itertools.combinations_with_replacement(FP_POWERS, 2)]


# ---------------------------------------------------------------------------
# model assembly and testing machinery
# ---------------------------------------------------------------------------

def _design(dataset: Dataset, forms: dict[int, FpTerm],
            interactions) -> np.ndarray:
    n = dataset.n
    cols = [np.ones(n)]
    for j in sorted(forms):
        term = forms[j]
        cols.append(fp_columns(dataset.X[:, j] + term.shift, term.powers))
    for covs in interactions:
        cols.append(np.prod(dataset.X[:, list(covs)], axis=1).reshape(-1, 1))
    return np.column_stack(cols)


def _rss(dataset: Dataset, forms, interactions) -> float | None:
    """rss of the least-squares fit, or None when the design is singular."""
    design = _design(dataset, forms, interactions)
    try:
        return solve_least_squares(design, dataset.y).rss
    except RankDeficientError:
        return None


class _LrTester:
    """Likelihood-ratio chi-square tests with a numerical-zero floor."""

    def __init__(self, dataset: Dataset, alpha: float):
        self.n = dataset.n
        self.alpha = alpha
        scale = float(np.mean(dataset.y ** 2))
        self.floor = max(_RSS_FLOOR_RTOL * self.n * max(scale, 1e-300), 1e-300)
        self._crit = {df: float(stats.chi2.ppf(1.0 - alpha, df)) for df in (1, 2)}

    def statistic(self, rss_null: float, rss_alt: float) -> float:
        rss_null = max(rss_null, self.floor)
        rss_alt = max(rss_alt, self.floor)
        return max(self.n * math.log(rss_null / rss_alt), 0.0)

    def significant(self, rss_null, rss_alt, df: int) -> bool:
        if rss_alt is None:
            return False
        if rss_null is None:
            return True
        return self.statistic(rss_null, rss_alt) > self._crit[df]


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def order_covariates(dataset: Dataset) -> list[int]:
    """Covariate indices by decreasing contribution to a full linear model.

    Contribution is the likelihood-ratio statistic from dropping the
    covariate out of the all-linear model; ties keep index order.
    """
    forms = {j: FpTerm(j, LINEAR, positivity_shift(dataset.X[:, j]))
             for j in range(dataset.p)}
    full = _rss(dataset, forms, [])
    if full is None:
        raise RankDeficientError("full linear model is singular")
    floor = max(_RSS_FLOOR_RTOL * dataset.n * max(float(np.mean(dataset.y ** 2)), 1e-300),
                1e-300)
    scores = []
    for j in range(dataset.p):
        reduced = {k: v for k, v in forms.items() if k != j}
        rss_j = _rss(dataset, reduced, [])
        if rss_j is None:
            stat = math.inf
        else:
            stat = max(dataset.n * math.log(max(rss_j, floor) / max(full, floor)), 0.0)
        scores.append((-stat, j))
    return [j for _, j in sorted(scores)]


def best_fp(dataset: Dataset, j: int, degree: int,
            current_forms: dict[int, FpTerm] | None = None,
            interactions=(), shift: bool = True) -> FpTerm:
    """Best fractional-polynomial form of the given degree for covariate j.

    All candidate power tuples are scored by the rss of the refitted
    model, holding the other covariates at ``current_forms`` (and any
    supplied interactions in the model); ties go to the
    lexicographically smallest tuple.
    """
    term, _ = _best_fp_with_rss(dataset, j, degree, current_forms or {},
                                interactions, shift)
    if term is None:
        raise RankDeficientError(
            f"every degree-{degree} candidate for covariate {j} is singular"
        )
    return term


def _best_fp_with_rss(dataset, j, degree, current_forms, interactions, shift):
    if degree not in (1, 2):
        raise ValidationError(f"degree must be 1 or 2, got {degree}")
    if j < 0 or j >= dataset.p:
        raise ValidationError(f"no covariate {j}")
    x = dataset.X[:, j]
    delta = positivity_shift(x) if shift else 0.0
    if np.any(x + delta <= 0):
        raise NonPositiveValuesError(
            f"covariate {j} has nonpositive values and shifting is disabled"
        )
    others = {k: v for k, v in current_forms.items() if k != j}
    best = None
    best_rss = math.inf
    for powers in _fp_power_sets(degree):
        forms = dict(others)
        forms[j] = FpTerm(j, powers, delta)
        rss = _rss(dataset, forms, interactions)
        if rss is not None and rss < best_rss:
            best_rss = rss
            best = FpTerm(j, powers, delta)
    return best, best_rss


def mfp_select(dataset: Dataset, alpha: float = 0.05, interactions: int = 0,
               max_cycles: int = 10, shift: bool = True) -> MfpFit:
    """Multivariable fractional-polynomial selection with a closed test.

    Per covariate and cycle: (1) the best degree-2 form against the
    model without the covariate, on 2 df -- failure excludes it;
    (2) best degree-2 against linear, on 1 df -- failure keeps the
    linear effect; (3) best degree-2 against best degree-1, on 1 df.
    With ``interactions`` set to 2 or 3, all products of that many
    distinct covariates are then tested in and out on 1 df each.
    Cycles repeat until nothing changes.

    Raises
    ------
    NoConvergenceError
        If forms keep changing after ``max_cycles`` cycles.
    """
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must be in (0, 1), got {alpha}")
    if interactions not in (0, 2, 3):
        raise ValidationError("interactions must be 0, 2 or 3")
    if max_cycles < 1:
        raise ValidationError(f"max_cycles must be >= 1, got {max_cycles}")

    p = dataset.p
    tester = _LrTester(dataset, alpha)
    shifts = tuple(positivity_shift(dataset.X[:, j]) if shift else 0.0
                   for j in range(p))
    for j in range(p):
        if np.any(dataset.X[:, j] + shifts[j] <= 0):
            raise NonPositiveValuesError(
                f"covariate {j} has nonpositive values and shifting is disabled"
            )
    forms: dict[int, FpTerm] = {j: FpTerm(j, LINEAR, shifts[j]) for j in range(p)}
    inter_candidates: list[tuple[int, ...]] = []
    if interactions:
        for size in range(2, interactions + 1):
            inter_candidates.extend(itertools.combinations(range(p), size))
    included_inters: list[tuple[int, ...]] = []
    order = order_covariates(dataset)

    for _cycle in range(max_cycles):
        before = (tuple(sorted((j, t.powers) for j, t in forms.items())),
                  tuple(included_inters))
        for j in order:
            others = {k: v for k, v in forms.items() if k != j}
            fp2, rss_fp2 = _best_fp_with_rss(dataset, j, 2, others,
                                             included_inters, shift)
            if fp2 is None:
                forms.pop(j, None)
                continue
            rss_null = _rss(dataset, others, included_inters)
            if not tester.significant(rss_null, rss_fp2, df=2):
                forms.pop(j, None)
                continue
            linear = dict(others)
            linear[j] = FpTerm(j, LINEAR, shifts[j])
            rss_linear = _rss(dataset, linear, included_inters)
            if not tester.significant(rss_linear, rss_fp2, df=1):
                forms[j] = linear[j]
                continue
            fp1, rss_fp1 = _best_fp_with_rss(dataset, j, 1, others,
                                             included_inters, shift)
            if fp1 is not None and not tester.significant(rss_fp1, rss_fp2, df=1):
                forms[j] = fp1
            else:
                forms[j] = fp2
        for covs in inter_candidates:
            rest = [t for t in included_inters if t != covs]
            rss_without = _rss(dataset, forms, rest)
            rss_with = _rss(dataset, forms, rest + [covs])
            wanted = tester.significant(rss_without, rss_with, df=1)
            if wanted and covs not in included_inters:
                included_inters = rest + [covs]
            elif not wanted and covs in included_inters:
                included_inters = rest
        included_inters.sort(key=lambda t: (len(t), t))
        after = (tuple(sorted((j, t.powers) for j, t in forms.items())),
                 tuple(included_inters))
        if after == before:
            break
    else:
        raise NoConvergenceError(
            f"forms still changing after {max_cycles} cycles"
        )

    return _final_fit(dataset, forms, included_inters, alpha)


def _final_fit(dataset, forms, included_inters, alpha) -> MfpFit:
    design = _design(dataset, forms, included_inters)
    fit = solve_least_squares(design, dataset.y)
    coefs = fit.coefficients
    pos = 1
    terms = []
    for j in sorted(forms):
        term = forms[j]
        width = term.degree
        terms.append(replace(term,
                             coefficients=tuple(float(c) for c in coefs[pos:pos + width])))
        pos += width
    inters = []
    for covs in included_inters:
        inters.append(InteractionTerm(covariates=covs, coefficient=float(coefs[pos])))
        pos += 1
    y = dataset.y
    tss = float(np.sum((y - y.mean()) ** 2))
    r_squared = 0.0 if tss == 0 else max(0.0, min(1.0, 1.0 - fit.rss / tss))
    excluded = tuple(j for j in range(dataset.p) if j not in forms)
    return MfpFit(
        terms=tuple(terms),
        interactions=tuple(inters),
        intercept=float(coefs[0]),
        excluded=excluded,
        alpha=alpha,
        r_squared=r_squared,
        names=dataset.names,
    )


def derive_dof_formula(rows, alpha: float = 0.05):
    """Fit a closed-form DoF surface to a Monte-Carlo grid.

    Parameters
    ----------
    rows : array-like, shape (N, 4+)
        Rows (p, n, s, dof); extra columns (e.g. standard errors) are
        ignored.  At least 20 rows are required.
    alpha : float
        Significance level for the selection tests.

    Returns
    -------
    (MfpFit, str)
        The fitted surface over covariates (s, p, n) with interaction
        candidates s*p, s*n, p*n and s*p*n, and its rendered form.
    """
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[1] < 4:
        raise ValidationError("expected rows (p, n, s, dof)")
    if rows.shape[0] < 20:
        raise ValidationError(
            f"need at least 20 grid rows to fit a surface, got {rows.shape[0]}"
        )
    if not np.isfinite(rows).all():
        raise ValidationError("grid rows must be finite")
    X = rows[:, [2, 0, 1]]
    y = rows[:, 3]
    dataset = Dataset.from_arrays(y, X, names=("s", "p", "n"))
    fit = mfp_select(dataset, alpha=alpha, interactions=3)
    return fit, fit.expression()
