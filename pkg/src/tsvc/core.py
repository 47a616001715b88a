"""Gaussian least-squares backbone shared by every model fit.

All tree models in this package reduce to ordinary least squares on an
expanded design matrix, so the numerical core lives here: a validated
data container, a rank-checked QR solver, and the profile Gaussian
log-likelihood evaluated at the variance MLE ``rss / n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    DegenerateFitError,
    DimensionMismatchError,
    RankDeficientError,
    ValidationError,
)

# Relative pivot threshold for declaring a design rank deficient: a
# diagonal entry of the pivoted R factor below 1e-10 times the largest
# pivot counts as zero.
RANK_RTOL = 1e-10

# A residual sum of squares this small relative to ||y||^2 is QR
# round-off on a response the design reproduces exactly (for example a
# constant y against an intercept); it is treated as exactly zero so
# saturated fits are flagged instead of reporting a bogus likelihood.
RSS_ZERO_RTOL = 1e-28


@dataclass(frozen=True)
class Dataset:
    """Response vector with a named covariate matrix.

    Attributes
    ----------
    y : ndarray, shape (n,)
        Response values.
    X : ndarray, shape (n, p)
        Covariate matrix, one column per covariate.
    names : tuple of str
        Unique column labels, used in reports and serialised models.
    """

    y: np.ndarray
    X: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        y, X = self.y, self.X
        if y.ndim != 1 or X.ndim != 2:
            raise ValidationError("y must be 1-d and X 2-d")
        n, p = X.shape
        if y.shape[0] != n:
            raise ValidationError(f"y has {y.shape[0]} rows, X has {n}")
        if p < 1:
            raise ValidationError("at least one covariate is required")
        # 2p + 2 is the smallest size at which a one-split model per
        # covariate is even conceivable; below that the search is vacuous.
        if n < 2 * p + 2:
            raise ValidationError(f"need n >= 2p + 2 = {2 * p + 2}, got n = {n}")
        if not (np.isfinite(y).all() and np.isfinite(X).all()):
            raise ValidationError("y and X must be finite")
        if len(self.names) != p:
            raise ValidationError(f"expected {p} column names, got {len(self.names)}")
        if len(set(self.names)) != p:
            raise ValidationError("column names must be unique")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @classmethod
    def from_arrays(cls, y, X, names=None) -> "Dataset":
        """Build a validated Dataset, coercing inputs to float arrays."""
        y = np.ascontiguousarray(y, dtype=float)
        X = np.ascontiguousarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if names is None:
            names = tuple(f"x{j + 1}" for j in range(X.shape[1] if X.ndim == 2 else 0))
        return cls(y=y, X=X, names=tuple(names))


@dataclass(frozen=True)
class LinearFit:
    """Result of one least-squares solve.

    ``sigma2_hat`` is the maximum-likelihood variance ``rss / n`` and
    ``log_lik`` the Gaussian log-likelihood profiled at it.  A fit that
    interpolates exactly (``rss == 0``) carries ``log_lik = inf``;
    downstream likelihood consumers treat that as a degenerate model.
    """

    coefficients: np.ndarray
    fitted: np.ndarray
    rss: float
    sigma2_hat: float
    log_lik: float
    n_params: int


def gaussian_log_lik(rss: float, n: int) -> float:
    """Profile Gaussian log-likelihood at the variance MLE rss / n.

    Parameters
    ----------
    rss : float
        Residual sum of squares, strictly positive.
    n : int
        Number of observations, at least 1.

    Returns
    -------
    float
        ``-(n / 2) * (log(2 * pi * rss / n) + 1)``.
    """
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    if rss < 0:
        raise ValidationError(f"rss must be nonnegative, got {rss}")
    if rss == 0:
        raise DegenerateFitError("zero residual sum of squares: likelihood is unbounded")
    return -0.5 * n * (math.log(2.0 * math.pi * rss / n) + 1.0)


def solve_least_squares(design, y, return_basis: bool = False):
    """Least squares via column-pivoted QR with an explicit rank check.

    Parameters
    ----------
    design : ndarray, shape (n, q)
        Design matrix with q <= n.
    y : ndarray, shape (n,)
        Response vector.
    return_basis : bool
        When True, also return the orthonormal basis Q of the column
        space (used by the split search to score rank-one updates).

    Returns
    -------
    LinearFit or (LinearFit, ndarray)

    Raises
    ------
    RankDeficientError
        If any pivot falls below ``RANK_RTOL`` times the largest pivot.
    """
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    if design.ndim != 2 or y.ndim != 1 or design.shape[0] != y.shape[0]:
        raise DimensionMismatchError(
            f"incompatible shapes {design.shape} and {y.shape}"
        )
    n, q = design.shape
    if q < 1 or q > n:
        raise DimensionMismatchError(f"need 1 <= q <= n, got q = {q}, n = {n}")

    Q, R, piv = scipy.linalg.qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag[0] == 0.0 or np.any(diag < RANK_RTOL * diag[0]):
        rank = 0 if diag[0] == 0.0 else int(np.sum(diag >= RANK_RTOL * diag[0]))
        raise RankDeficientError(f"design has numerical rank {rank} < {q}")

    coef_piv = scipy.linalg.solve_triangular(R, Q.T @ y)
    coefficients = np.empty(q)
    coefficients[piv] = coef_piv
    fitted = design @ coefficients
    resid = y - fitted
    rss = float(resid @ resid)
    if rss <= RSS_ZERO_RTOL * max(1.0, float(y @ y)):
        rss = 0.0
    sigma2_hat = rss / n
    if rss == 0.0:
        log_lik = math.inf
    else:
        log_lik = -0.5 * n * (math.log(2.0 * math.pi * sigma2_hat) + 1.0)
    fit = LinearFit(
        coefficients=coefficients,
        fitted=fitted,
        rss=rss,
        sigma2_hat=sigma2_hat,
        log_lik=log_lik,
        n_params=q,
    )
    if return_basis:
        return fit, Q
    return fit
