"""Effective degrees of freedom for greedily grown coefficient trees.

A model that searches over splits spends more degrees of freedom than
it has coefficients.  Following the generalized definition
``df = (1/sigma^2) * sum_i Cov(muhat_i, y_i)``, this module provides

* ``dof_naive``      -- the raw coefficient count ``p + s + 1``,
* ``mc_dof``         -- a Monte-Carlo estimate of the generalized DoF,
* ``dof_mfp``        -- a closed-form surface fitted to a simulated
                        grid of Monte-Carlo estimates,
* the shipped reference grid itself with exact / nearest lookup.

The Monte-Carlo estimator holds the mean vector fixed (zero by
default), simulates ``m`` unit-variance Gaussian response vectors,
fits the full model path to each, and sums the unbiased sample
covariances between fitted values and responses.  That is repeated
over ``runs`` independent runs; the reported value is the mean across
runs and the standard error is the spread across runs.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .core import Dataset
from .errors import (
    DomainError,
    MissingDofError,
    OffGridError,
    ValidationError,
)
from .tree import fit_path

# Closed-form surface coefficients: intercept, s, p, p*s, p*s*n.
MFP_SURFACE = (2.13, 2.02, 1.26, 0.61, 0.00016)


def dof_naive(p: int, s: int) -> float:
    """Raw free-coefficient count of a model with s splits: p + s + 1."""
    if p < 1:
        raise DomainError(f"p must be >= 1, got {p}")
    if s < 0:
        raise DomainError(f"s must be >= 0, got {s}")
    return float(p + s + 1)


def dof_mfp(s: int, p: int, n: int) -> float:
    """Closed-form degrees-of-freedom surface for a greedy s-split search.

    For s >= 1 returns
    ``2.13 + 2.02*s + 1.26*p + 0.61*p*s + 0.00016*p*s*n``;
    a model without splits spends exactly its p + 1 coefficients.

    Raises
    ------
    DomainError
        If p < 2 (a varying-coefficient split needs a second covariate)
        or s < 0 or n < 1.
    """
    if p < 2:
        raise DomainError(f"the surface requires p >= 2, got {p}")
    if s < 0:
        raise DomainError(f"s must be >= 0, got {s}")
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if s == 0:
        return float(p + 1)
    b0, bs, bp, bps, bpsn = MFP_SURFACE
    return b0 + bs * s + bp * p + bps * p * s + bpsn * p * s * n


# ---------------------------------------------------------------------------
# Monte-Carlo estimator
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class McDofConfig:
    """Settings for the Monte-Carlo DoF estimator.

    ``mu`` is the fixed expectation vector (zeros when None).  Each of
    the ``runs`` runs draws a fresh standard-normal design (unless one
    is supplied to ``mc_dof``) and ``m`` response vectors.
    """

    m: int = 100
    runs: int = 10
    s_max: int = 5
    min_leaf: int = 10
    seed: int = 0
    mu: np.ndarray | None = None

    def __post_init__(self):
        if self.m < 2:
            raise ValidationError(f"m must be >= 2, got {self.m}")
        if self.runs < 1:
            raise ValidationError(f"runs must be >= 1, got {self.runs}")
        if self.s_max < 1:
            raise ValidationError(f"s_max must be >= 1, got {self.s_max}")
        if self.min_leaf < 1:
            raise ValidationError(f"min_leaf must be >= 1, got {self.min_leaf}")


@dataclass(frozen=True)
class McDofEntry:
    s: int
    dof: float
    se: float
    runs_used: int
    short_paths: int


@dataclass(frozen=True)
class McDofResult:
    """Per-split-count DoF estimates with run-to-run standard errors.

    ``short_paths`` counts replicate fits that stopped before reaching
    the given split count and therefore did not contribute to it.
    """

    n: int
    p: int
    m: int
    runs: int
    seed: int
    entries: tuple[McDofEntry, ...]

    def dof_for(self, s: int) -> float:
        for entry in self.entries:
            if entry.s == s:
                return entry.dof
        raise MissingDofError(f"no Monte-Carlo estimate for s = {s}")

    def to_csv(self, path=None) -> str:
        """Write rows (p, n, s, dof, se); returns the text."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["p", "n", "s", "dof", "se"])
        for entry in self.entries:
            writer.writerow([self.p, self.n, entry.s, repr(entry.dof), repr(entry.se)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as handle:
                handle.write(text)
        return text


@dataclass(frozen=True)
class TsvcPathFitter:
    """Default path fitter for ``mc_dof``: one fitted-value vector per
    split count 1 .. s_max actually reached by the greedy path."""

    s_max: int = 5
    min_leaf: int = 10

    def __call__(self, y: np.ndarray, X: np.ndarray) -> dict[int, np.ndarray]:
        path = fit_path(Dataset.from_arrays(y, X), self.s_max, self.min_leaf)
        return {m.s: m.fit.fitted for m in path.models if m.s >= 1}


def _mc_dof_run(args):
    """One independent run: fresh design, m responses, m path fits."""
    n, p, seed, run_index, m, mu, X, fitter = args
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(run_index,)))
    Xr = rng.standard_normal((n, p)) if X is None else X
    Y = mu[None, :] + rng.standard_normal((m, n))
    fits = [fitter(Y[j], Xr) for j in range(m)]
    keys = sorted({s for f in fits for s in f})
    out = {}
    for s in keys:
        have = [j for j in range(m) if s in fits[j]]
        short = m - len(have)
        if len(have) < 2:
            out[s] = (None, short)
            continue
        M = np.stack([fits[j][s] for j in have])
        Ys = Y[have]
        Mc = M - M.mean(axis=0)
        Yc = Ys - Ys.mean(axis=0)
        dof = float((Mc * Yc).sum() / (len(have) - 1))
        out[s] = (dof, short)
    return out


def mc_dof(n: int, p: int, config: McDofConfig, fitter=None, X=None,
           threads: int = 1) -> McDofResult:
    """Monte-Carlo estimate of the generalized degrees of freedom.

    Parameters
    ----------
    n, p : int
        Dataset dimensions.  When ``X`` is None each run draws a fresh
        standard-normal design held fixed within that run.
    config : McDofConfig
        Replicates per run, run count, seed and the fixed mean vector.
    fitter : callable, optional
        ``fitter(y, X) -> {s: fitted values}``.  Defaults to the greedy
        tree path with ``config.s_max`` and ``config.min_leaf``.  Must
        be picklable when ``threads > 1``.
    threads : int
        Worker processes across runs; results are identical for any
        value because every run derives its own random stream.

    Returns
    -------
    McDofResult
    """
    if n < 1 or p < 1:
        raise ValidationError(f"need n >= 1 and p >= 1, got n = {n}, p = {p}")
    mu = np.zeros(n) if config.mu is None else np.asarray(config.mu, dtype=float)
    if mu.shape != (n,):
        raise ValidationError(f"mu must have shape ({n},), got {mu.shape}")
    if X is not None:
        X = np.asarray(X, dtype=float)
        if X.shape != (n, p):
            raise ValidationError(f"X must have shape ({n}, {p}), got {X.shape}")
    if fitter is None:
        fitter = TsvcPathFitter(s_max=config.s_max, min_leaf=config.min_leaf)

    jobs = [
        (n, p, config.seed, r, config.m, mu, X, fitter)
        for r in range(config.runs)
    ]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            per_run = list(pool.map(_mc_dof_run, jobs))
    else:
        per_run = [_mc_dof_run(job) for job in jobs]

    keys = sorted({s for run in per_run for s in run})
    entries = []
    for s in keys:
        values = [run[s][0] for run in per_run if s in run and run[s][0] is not None]
        short = sum(run[s][1] for run in per_run if s in run)
        if not values:
            continue
        mean = float(np.mean(values))
        se = float(np.std(values, ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0
        entries.append(
            McDofEntry(s=s, dof=mean, se=se, runs_used=len(values), short_paths=short)
        )
    return McDofResult(
        n=n, p=p, m=config.m, runs=config.runs, seed=config.seed,
        entries=tuple(entries),
    )


# ---------------------------------------------------------------------------
# reference grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class McDofTable:
    """Grid of Monte-Carlo DoF estimates indexed by (p, n, s)."""

    rows: tuple[tuple[int, int, int, float, float], ...]

    @classmethod
    def from_csv_text(cls, text: str) -> "McDofTable":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:5]] != ["p", "n", "s", "dof", "se"]:
            raise ValidationError("expected header p,n,s,dof,se")
        rows = []
        for line in reader:
            if not line:
                continue
            try:
                rows.append(
                    (int(line[0]), int(line[1]), int(line[2]),
                     float(line[3]), float(line[4]))
                )
            except (IndexError, ValueError) as exc:
                raise ValidationError(f"bad table row {line!r}") from exc
        if not rows:
            raise ValidationError("table has no data rows")
        return cls(rows=tuple(rows))

    @classmethod
    def load(cls, path) -> "McDofTable":
        with open(path, "r", encoding="utf-8") as handle:
            return cls.from_csv_text(handle.read())

    def lookup(self, p: int, n: int, s: int, mode: str = "exact") -> float:
        """DoF for the cell (p, n, s).

        ``mode='exact'`` requires the cell to be present.  In
        ``'nearest'`` mode p snaps to the closest tabulated value
        (ties to the smaller), then n likewise; s must still match a
        tabulated split count exactly.
        """
        if mode not in ("exact", "nearest"):
            raise ValidationError(f"unknown lookup mode {mode!r}")
        if mode == "exact":
            for rp, rn, rs, dof, _ in self.rows:
                if (rp, rn, rs) == (p, n, s):
                    return dof
            raise OffGridError(f"cell (p={p}, n={n}, s={s}) not in the table")
        ps = sorted({r[0] for r in self.rows})
        p_near = min(ps, key=lambda v: (abs(v - p), v))
        ns = sorted({r[1] for r in self.rows if r[0] == p_near})
        n_near = min(ns, key=lambda v: (abs(v - n), v))
        for rp, rn, rs, dof, _ in self.rows:
            if (rp, rn, rs) == (p_near, n_near, s):
                return dof
        raise OffGridError(
            f"no row for s = {s} at the nearest cell (p={p_near}, n={n_near})"
        )


_REFERENCE: McDofTable | None = None


def reference_table() -> McDofTable:
    """The packaged Monte-Carlo DoF grid (p in 2..10, n in 100..1000, s in 1..5)."""
    global _REFERENCE
    if _REFERENCE is None:
        text = resources.files("tsvc").joinpath("data/mc_dof_table.csv").read_text()
        _REFERENCE = McDofTable.from_csv_text(text)
    return _REFERENCE


def dof_table_lookup(p: int, n: int, s: int, mode: str = "exact",
                     table: McDofTable | None = None) -> float:
    """Lookup into the packaged grid (or a caller-supplied one)."""
    return (table or reference_table()).lookup(p, n, s, mode=mode)


# ---------------------------------------------------------------------------
# degrees-of-freedom sources for model selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DofSpec:
    """Strategy giving the DoF charged to a model with s splits.

    Kinds: ``naive`` (p + s + 1), ``mfp`` (closed-form surface),
    ``table`` (grid lookup, exact or nearest) and ``custom`` (a
    Monte-Carlo result supplied by the caller).  Every kind charges a
    split-free model exactly p + 1.
    """

    kind: str
    table_mode: str = "exact"
    table: McDofTable | None = None
    custom: McDofResult | None = None
    label: str | None = None

    _KINDS = ("naive", "mfp", "table", "custom")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValidationError(f"unknown DoF kind {self.kind!r}")
        if self.kind == "custom" and self.custom is None:
            raise ValidationError("custom DofSpec needs an McDofResult")

    @classmethod
    def naive(cls) -> "DofSpec":
        return cls(kind="naive")

    @classmethod
    def mfp(cls) -> "DofSpec":
        return cls(kind="mfp")

    @classmethod
    def from_table(cls, mode: str = "exact", table: McDofTable | None = None,
                   label: str | None = None) -> "DofSpec":
        return cls(kind="table", table_mode=mode, table=table, label=label)

    @classmethod
    def from_custom(cls, result: McDofResult, label: str | None = None) -> "DofSpec":
        return cls(kind="custom", custom=result, label=label)

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        if self.kind == "table" and self.table_mode != "exact":
            return f"table-{self.table_mode}"
        return self.kind

    def dof_for(self, s: int, p: int, n: int) -> float:
        if s == 0:
            return float(p + 1)
        if self.kind == "naive":
            return dof_naive(p, s)
        if self.kind == "mfp":
            return dof_mfp(s, p, n)
        if self.kind == "table":
            try:
                return dof_table_lookup(p, n, s, mode=self.table_mode, table=self.table)
            except OffGridError as exc:
                raise MissingDofError(str(exc)) from exc
        try:
            return self.custom.dof_for(s)
        except MissingDofError:
            raise MissingDofError(
                f"custom Monte-Carlo result lacks a value for s = {s}"
            ) from None
