"""Degrees-of-freedom calculators: formula, Monte-Carlo, reference grid."""

import pickle

import numpy as np
import pytest

from tsvc.core import solve_least_squares
from tsvc.dof import (
    DofSpec,
    McDofConfig,
    McDofTable,
    TsvcPathFitter,
    dof_mfp,
    dof_naive,
    dof_table_lookup,
    mc_dof,
    reference_table,
)
from tsvc.errors import (
    DomainError,
    MissingDofError,
    OffGridError,
    ValidationError,
)


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------

def test_dof_naive_values():
    assert dof_naive(2, 1) == 4.0
    assert dof_naive(10, 5) == 16.0
    assert dof_naive(1, 0) == 2.0


def test_dof_naive_domain():
    with pytest.raises(DomainError):
        dof_naive(0, 1)
    with pytest.raises(DomainError):
        dof_naive(2, -1)


def test_dof_mfp_values():
    assert dof_mfp(1, 2, 100) == pytest.approx(7.922, abs=1e-9)
    assert dof_mfp(5, 10, 1000) == pytest.approx(63.33, abs=1e-9)
    assert dof_mfp(0, 4, 2985) == 5.0


def test_dof_mfp_domain():
    with pytest.raises(DomainError):
        dof_mfp(1, 1, 100)
    with pytest.raises(DomainError):
        dof_mfp(-1, 2, 100)
    with pytest.raises(DomainError):
        dof_mfp(1, 2, 0)


def test_dof_mfp_strictly_increasing():
    for args, bumped in [
        ((1, 2, 100), (2, 2, 100)),
        ((3, 4, 400), (3, 6, 400)),
        ((3, 4, 400), (3, 4, 700)),
    ]:
        assert dof_mfp(*bumped) > dof_mfp(*args)


def test_dof_mfp_per_split_increment_exceeds_one():
    for p in (2, 5, 10):
        for n in (1, 100, 1000):
            for s in (1, 3):
                inc = dof_mfp(s + 1, p, n) - dof_mfp(s, p, n)
                assert inc > 1.0


# ---------------------------------------------------------------------------
# Monte-Carlo estimator
# ---------------------------------------------------------------------------

class OlsFitter:
    """Non-adaptive 3-parameter projection; its DoF is its trace."""

    def __call__(self, y, X):
        design = np.column_stack([np.ones(len(y)), X])
        return {1: solve_least_squares(design, y).fitted}


def test_mc_dof_config_validation():
    with pytest.raises(ValidationError):
        McDofConfig(m=1)
    with pytest.raises(ValidationError):
        McDofConfig(runs=0)
    with pytest.raises(ValidationError):
        McDofConfig(s_max=0)


def test_mc_dof_of_fixed_projection_is_parameter_count():
    config = McDofConfig(m=300, runs=2, s_max=1, seed=1)
    result = mc_dof(n=60, p=2, config=config, fitter=OlsFitter())
    entry = result.entries[0]
    assert entry.s == 1
    assert entry.dof == pytest.approx(3.0, abs=max(3 * entry.se, 0.45))


def test_mc_dof_deterministic_and_thread_independent():
    config = McDofConfig(m=20, runs=3, s_max=2, min_leaf=8, seed=42)
    a = mc_dof(n=40, p=2, config=config, threads=1)
    b = mc_dof(n=40, p=2, config=config, threads=2)
    c = mc_dof(n=40, p=2, config=config, threads=1)
    assert a.entries == b.entries == c.entries
    assert a.to_csv() == b.to_csv()


def test_mc_dof_exceeds_naive_for_searching_fitter():
    config = McDofConfig(m=40, runs=2, s_max=2, min_leaf=10, seed=3)
    result = mc_dof(n=60, p=2, config=config)
    for entry in result.entries:
        assert entry.dof > dof_naive(2, entry.s)


def test_mc_dof_records_short_paths():
    # min_leaf 18 on n = 40 allows one split at most, so s = 2 is never
    # reached and the result only carries s = 1
    config = McDofConfig(m=10, runs=1, s_max=3, min_leaf=18, seed=4)
    result = mc_dof(n=40, p=2, config=config)
    reached = {e.s for e in result.entries}
    assert 1 in reached and 3 not in reached
    with pytest.raises(MissingDofError):
        result.dof_for(3)


def test_mc_dof_single_run_has_zero_se():
    config = McDofConfig(m=15, runs=1, s_max=1, min_leaf=10, seed=5)
    result = mc_dof(n=40, p=2, config=config)
    assert result.entries[0].se == 0.0


def test_mc_dof_csv_round_trips_into_table():
    config = McDofConfig(m=15, runs=2, s_max=2, min_leaf=8, seed=6)
    result = mc_dof(n=40, p=2, config=config)
    table = McDofTable.from_csv_text(result.to_csv())
    for entry in result.entries:
        assert table.lookup(2, 40, entry.s) == entry.dof


def test_path_fitter_is_picklable():
    fitter = TsvcPathFitter(s_max=3, min_leaf=7)
    clone = pickle.loads(pickle.dumps(fitter))
    assert clone == fitter


# ---------------------------------------------------------------------------
# reference grid
# ---------------------------------------------------------------------------

def test_reference_table_shape_and_anchors():
    table = reference_table()
    assert len(table.rows) == 100
    cells = {(p, n, s) for p, n, s, _, _ in table.rows}
    assert cells == {(p, n, s)
                     for p in (2, 4, 6, 8, 10)
                     for n in (100, 400, 700, 1000)
                     for s in (1, 2, 3, 4, 5)}
    assert table.lookup(6, 400, 3) == pytest.approx(31.66)
    assert table.lookup(2, 1000, 5) == pytest.approx(19.82)


def test_reference_table_monotone_in_s():
    table = reference_table()
    series = {}
    for p, n, s, dof, _ in table.rows:
        series.setdefault((p, n), {})[s] = dof
    for values in series.values():
        ordered = [values[s] for s in sorted(values)]
        assert ordered == sorted(ordered)


def test_lookup_exact_misses_off_grid():
    with pytest.raises(OffGridError):
        dof_table_lookup(3, 100, 1)
    with pytest.raises(OffGridError):
        dof_table_lookup(2, 100, 6)


def test_lookup_nearest_snaps_with_tie_to_smaller():
    # p = 5 ties between 4 and 6 -> 4; n = 500 is closest to 400
    assert dof_table_lookup(5, 500, 2, mode="nearest") == pytest.approx(19.39)
    # n = 550 ties between 400 and 700 -> 400
    assert dof_table_lookup(2, 550, 1, mode="nearest") == pytest.approx(7.34)
    with pytest.raises(OffGridError):
        dof_table_lookup(5, 500, 7, mode="nearest")


def test_table_parser_rejects_bad_input():
    with pytest.raises(ValidationError):
        McDofTable.from_csv_text("a,b\n1,2\n")
    with pytest.raises(ValidationError):
        McDofTable.from_csv_text("p,n,s,dof,se\n")
    with pytest.raises(ValidationError):
        McDofTable.from_csv_text("p,n,s,dof,se\n2,100,1,x,0.1\n")


# ---------------------------------------------------------------------------
# DofSpec
# ---------------------------------------------------------------------------

def test_dof_spec_names():
    assert DofSpec.naive().name == "naive"
    assert DofSpec.mfp().name == "mfp"
    assert DofSpec.from_table().name == "table"
    assert DofSpec.from_table(mode="nearest").name == "table-nearest"
    assert DofSpec.from_table(label="grid").name == "grid"


def test_dof_spec_zero_splits_always_p_plus_one():
    config = McDofConfig(m=10, runs=1, s_max=1, min_leaf=10, seed=7)
    custom = DofSpec.from_custom(mc_dof(n=40, p=2, config=config))
    for spec in (DofSpec.naive(), DofSpec.mfp(), DofSpec.from_table(), custom):
        assert spec.dof_for(0, 4, 1000) == 5.0


def test_dof_spec_values_match_sources():
    assert DofSpec.naive().dof_for(2, 3, 500) == dof_naive(3, 2)
    assert DofSpec.mfp().dof_for(2, 4, 700) == dof_mfp(2, 4, 700)
    assert DofSpec.from_table().dof_for(3, 6, 400) == pytest.approx(31.66)


def test_dof_spec_wraps_lookup_misses():
    with pytest.raises(MissingDofError):
        DofSpec.from_table().dof_for(1, 3, 100)
    config = McDofConfig(m=10, runs=1, s_max=1, min_leaf=10, seed=8)
    custom = DofSpec.from_custom(mc_dof(n=40, p=2, config=config))
    with pytest.raises(MissingDofError):
        custom.dof_for(5, 2, 40)


def test_dof_spec_rejects_unknown_kind():
    with pytest.raises(ValidationError):
        DofSpec(kind="guesswork")
    with pytest.raises(ValidationError):
        DofSpec(kind="custom")
