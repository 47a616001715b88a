"""Fractional-polynomial transforms, closed-test selection, surface fit."""

import json

import numpy as np
import pytest

from tsvc.core import Dataset
from tsvc.errors import (
    NoConvergenceError,
    NonPositiveValuesError,
    ValidationError,
)
from tsvc.mfp import (
    FP_POWERS,
    _fp_power_sets,
    best_fp,
    derive_dof_formula,
    fp_columns,
    mfp_select,
    order_covariates,
    positivity_shift,
)

SURFACE = (2.13, 2.02, 1.26, 0.61, 0.00016)


def _grid_rows(coefs=SURFACE):
    b0, bs, bp, bps, bpsn = coefs
    rows = []
    for p in (2, 4, 6, 8, 10):
        for n in (100, 400, 700, 1000):
            for s in (1, 2, 3, 4, 5):
                rows.append((p, n, s,
                             b0 + bs * s + bp * p + bps * p * s + bpsn * p * s * n))
    return rows


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------

def test_positivity_shift():
    assert positivity_shift(np.array([0.5, 1.0, 3.0])) == 0.0
    # smallest gap is 1, minimum is -1, so the shift is 2
    assert positivity_shift(np.array([-1.0, 0.0, 2.0])) == 2.0
    assert positivity_shift(np.array([0.0, 0.0])) == 1.0


def test_fp_columns_power_zero_is_log():
    x = np.array([1.0, np.e, np.e ** 2])
    np.testing.assert_allclose(fp_columns(x, (0.0,))[:, 0], [0.0, 1.0, 2.0],
                               atol=1e-12)


def test_fp_columns_simple_powers():
    x = np.array([1.0, 2.0, 4.0])
    cols = fp_columns(x, (2.0, 3.0))
    np.testing.assert_allclose(cols[:, 0], x ** 2)
    np.testing.assert_allclose(cols[:, 1], x ** 3)


def test_fp_columns_repeated_power_adds_log_product():
    x = np.array([1.0, 2.0, 4.0])
    cols = fp_columns(x, (2.0, 2.0))
    np.testing.assert_allclose(cols[:, 0], x ** 2)
    np.testing.assert_allclose(cols[:, 1], x ** 2 * np.log(x))
    cols0 = fp_columns(x, (0.0, 0.0))
    np.testing.assert_allclose(cols0[:, 1], np.log(x) ** 2)


def test_fp_columns_requires_positive_values():
    with pytest.raises(NonPositiveValuesError):
        fp_columns(np.array([1.0, 0.0]), (1.0,))


def test_power_set_sizes_and_order():
    singles = _fp_power_sets(1)
    pairs = _fp_power_sets(2)
    assert len(singles) == 8
    assert len(pairs) == 36
    assert singles == [(q,) for q in FP_POWERS]
    assert pairs == sorted(pairs)  # deterministic lexicographic enumeration


# ---------------------------------------------------------------------------
# best_fp
# ---------------------------------------------------------------------------

def _one_covariate(y, x):
    return Dataset.from_arrays(y, x.reshape(-1, 1))


def test_best_fp_recovers_square():
    rng = np.random.default_rng(31)
    x = rng.uniform(0.5, 3.0, 200)
    term = best_fp(_one_covariate(x ** 2, x), 0, 1)
    assert term.powers == (2.0,)


def test_best_fp_recovers_linear():
    rng = np.random.default_rng(32)
    x = rng.uniform(0.5, 3.0, 200)
    term = best_fp(_one_covariate(3.0 * x - 1.0, x), 0, 1)
    assert term.powers == (1.0,)


def test_best_fp_degree_two_beats_all_alternatives():
    rng = np.random.default_rng(33)
    x = rng.uniform(0.5, 3.0, 200)
    y = 1.3 * np.sqrt(x) - 0.8 / x
    term = best_fp(_one_covariate(y, x), 0, 2)
    assert term.powers == (-1.0, 0.5)
    # independent exhaustive check over the full candidate set
    best = None
    for powers in _fp_power_sets(2):
        design = np.column_stack([np.ones(len(x)), fp_columns(x, powers)])
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        rss = float(np.sum((y - design @ coef) ** 2))
        if best is None or rss < best[0]:
            best = (rss, powers)
    assert term.powers == best[1]


def test_best_fp_applies_shift_for_nonpositive_data():
    rng = np.random.default_rng(34)
    x = rng.standard_normal(150)  # spans negative values
    y = 2.0 * x + 1.0
    term = best_fp(_one_covariate(y, x), 0, 1)
    assert term.shift == positivity_shift(x) > 0
    with pytest.raises(NonPositiveValuesError):
        best_fp(_one_covariate(y, x), 0, 1, shift=False)


def test_best_fp_validates_arguments():
    rng = np.random.default_rng(35)
    x = rng.uniform(0.5, 3.0, 50)
    ds = _one_covariate(x, x)
    with pytest.raises(ValidationError):
        best_fp(ds, 0, 3)
    with pytest.raises(ValidationError):
        best_fp(ds, 5, 1)


# ---------------------------------------------------------------------------
# covariate ordering
# ---------------------------------------------------------------------------

def test_order_covariates_puts_strong_effect_first():
    rng = np.random.default_rng(36)
    X = rng.standard_normal((300, 3))
    y = 5.0 * X[:, 2] + 0.1 * X[:, 0] + rng.standard_normal(300)
    order = order_covariates(Dataset.from_arrays(y, X))
    assert order[0] == 2
    assert sorted(order) == [0, 1, 2]


def test_order_covariates_deterministic_and_trivial_case():
    rng = np.random.default_rng(37)
    X = rng.standard_normal((50, 2))
    y = rng.standard_normal(50)
    ds = Dataset.from_arrays(y, X)
    assert order_covariates(ds) == order_covariates(ds)
    one = Dataset.from_arrays(y, X[:, :1])
    assert order_covariates(one) == [0]


# ---------------------------------------------------------------------------
# mfp_select
# ---------------------------------------------------------------------------

def test_mfp_select_keeps_linear_truth():
    rng = np.random.default_rng(38)
    X = rng.standard_normal((2000, 3))
    y = 2.0 * X[:, 0] + 0.05 * rng.standard_normal(2000)
    fit = mfp_select(Dataset.from_arrays(y, X))
    assert [t.covariate for t in fit.terms] == [0]
    assert fit.terms[0].powers == (1.0,)
    assert set(fit.excluded) == {1, 2}


def test_mfp_select_excludes_pure_noise():
    rng = np.random.default_rng(39)
    X = rng.standard_normal((500, 3))
    y = rng.standard_normal(500)
    fit = mfp_select(Dataset.from_arrays(y, X), alpha=0.01)
    assert fit.terms == ()
    assert set(fit.excluded) == {0, 1, 2}


def test_mfp_select_finds_pure_interaction():
    rng = np.random.default_rng(40)
    X = rng.standard_normal((400, 2))
    y = X[:, 0] * X[:, 1]
    fit = mfp_select(Dataset.from_arrays(y, X), interactions=2)
    assert [i.covariates for i in fit.interactions] == [(0, 1)]
    assert fit.interactions[0].coefficient == pytest.approx(1.0, abs=1e-8)
    assert set(fit.excluded) == {0, 1}
    assert fit.r_squared == pytest.approx(1.0, abs=1e-10)


def test_mfp_select_validates_arguments():
    rng = np.random.default_rng(41)
    ds = Dataset.from_arrays(rng.standard_normal(30), rng.standard_normal((30, 2)))
    with pytest.raises(ValidationError):
        mfp_select(ds, alpha=0.0)
    with pytest.raises(ValidationError):
        mfp_select(ds, interactions=4)
    with pytest.raises(ValidationError):
        mfp_select(ds, max_cycles=0)


def test_mfp_select_reports_nonconvergence():
    # a curved truth changes x1's form away from linear in the first
    # cycle, so a budget of one cycle cannot confirm stability
    rng = np.random.default_rng(42)
    X = rng.uniform(0.5, 3.0, (300, 2))
    y = X[:, 0] ** 2
    ds = Dataset.from_arrays(y, X)
    with pytest.raises(NoConvergenceError):
        mfp_select(ds, max_cycles=1)
    fit = mfp_select(ds)  # default budget converges
    assert fit.terms[0].powers == (2.0,)


def test_mfp_predict_matches_manual_assembly():
    rng = np.random.default_rng(43)
    X = rng.uniform(0.5, 3.0, (300, 2))
    y = 1.5 * X[:, 0] ** 2 - 2.0 * X[:, 1] + 0.7
    fit = mfp_select(Dataset.from_arrays(y, X))
    manual = np.full(X.shape[0], fit.intercept)
    for term in fit.terms:
        cols = fp_columns(X[:, term.covariate] + term.shift, term.powers)
        manual += cols @ np.asarray(term.coefficients)
    np.testing.assert_allclose(fit.predict(X), manual, atol=1e-10)
    np.testing.assert_allclose(fit.predict(X), y, atol=1e-6)


# ---------------------------------------------------------------------------
# surface derivation
# ---------------------------------------------------------------------------

def test_derive_dof_formula_recovers_exact_surface():
    fit, expression = derive_dof_formula(_grid_rows())
    assert fit.names == ("s", "p", "n")
    assert fit.intercept == pytest.approx(SURFACE[0], abs=1e-6)
    by_name = {fit.names[t.covariate]: t for t in fit.terms}
    assert set(by_name) == {"s", "p"}
    assert by_name["s"].powers == (1.0,)
    assert by_name["p"].powers == (1.0,)
    assert by_name["s"].coefficients[0] == pytest.approx(SURFACE[1], abs=1e-6)
    assert by_name["p"].coefficients[0] == pytest.approx(SURFACE[2], abs=1e-6)
    inters = {tuple(sorted(fit.names[j] for j in i.covariates)): i.coefficient
              for i in fit.interactions}
    assert set(inters) == {("p", "s"), ("n", "p", "s")}
    assert inters[("p", "s")] == pytest.approx(SURFACE[3], abs=1e-6)
    assert inters[("n", "p", "s")] == pytest.approx(SURFACE[4], abs=1e-6)
    assert [fit.names[j] for j in fit.excluded] == ["n"]
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    assert "s*p*n" in expression


def test_derive_dof_formula_is_idempotent_on_its_own_surface():
    fit, expression = derive_dof_formula(_grid_rows())
    X = np.asarray(_grid_rows(), dtype=float)[:, [2, 0, 1]]
    refit_rows = [(p, n, s, d) for (p, n, s, _), d
                  in zip(_grid_rows(), fit.predict(X))]
    fit2, expression2 = derive_dof_formula(refit_rows)
    assert expression2 == expression


def test_derive_dof_formula_validates_input():
    with pytest.raises(ValidationError):
        derive_dof_formula(_grid_rows()[:3])
    with pytest.raises(ValidationError):
        derive_dof_formula(np.ones((30, 2)))
    bad = np.asarray(_grid_rows(), dtype=float)
    bad[0, 3] = np.nan
    with pytest.raises(ValidationError):
        derive_dof_formula(bad)


def test_mfp_fit_expression_and_json():
    fit, expression = derive_dof_formula(_grid_rows())
    assert expression.startswith("2.13")
    doc = json.loads(fit.to_json())
    assert doc["expression"] == expression
    assert doc["excluded"] == ["n"]
    assert {t["covariate"] for t in doc["terms"]} == {"s", "p"}
    assert [i["covariates"] for i in doc["interactions"]] == [["s", "p"],
                                                              ["s", "p", "n"]]
