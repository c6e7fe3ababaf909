import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from whitsel.polytope import (
    GuardExceeded,
    HPolytope,
    InfeasibleError,
    UnboundedError,
    box_rows,
    chebyshev_center,
    exact_lp,
    feasible,
    helly_check,
    minimize_linear,
    polytope_from_json,
    polytope_to_json,
    project,
)


def interval(lo, hi):
    return HPolytope.from_rows(1, [((1.0,), hi, 0.0), ((-1.0,), -lo, 0.0)])


def test_rows_and_instantiate():
    P = HPolytope.from_rows(1, [((1.0,), 1.0, 2.0), ((-1.0,), 0.0, 0.0)])
    A, b = P.instantiate(3.0)
    assert b[0] == pytest.approx(7.0)
    assert P.member((6.9,), 3.0)
    assert not P.member((7.1,), 3.0)


def test_feasible_witness_and_farkas():
    P = interval(0.0, 1.0)
    res = feasible(P, 1.0)
    assert res.is_feasible and P.member(res.witness, 1.0)
    bad = HPolytope.from_rows(1, [((1.0,), -1.0, 0.0), ((-1.0,), -1.0, 0.0)])
    res = feasible(bad, 1.0, exact=True)
    assert not res.is_feasible
    # Farkas: certificate y >= 0 with y.A = 0 and y.b < 0
    y = np.asarray(res.certificate, dtype=float)
    A, b = bad.instantiate(1.0)
    assert (y >= -1e-12).all()
    assert np.allclose(y @ A, 0.0, atol=1e-9)
    assert y @ b < 0


def test_box_rows_parametric():
    rows = box_rows(3)
    P = HPolytope.from_rows(3, rows)
    assert P.member((2.0, -2.0, 0.0), 2.0)
    assert not P.member((2.5, 0.0, 0.0), 2.0)


def test_minimize_linear_and_errors():
    P = interval(0.25, 2.0)
    val, w = minimize_linear(P, (1.0,), 1.0)
    assert val == pytest.approx(0.25)
    assert w[0] == pytest.approx(0.25)
    with pytest.raises(InfeasibleError):
        minimize_linear(HPolytope.from_rows(1, [((1.0,), -1.0, 0.0), ((-1.0,), -1.0, 0.0)]), (1.0,), 1.0)
    half = HPolytope.from_rows(1, [((1.0,), 0.0, 0.0)])
    with pytest.raises(UnboundedError):
        minimize_linear(half, (1.0,), 1.0)


def test_exact_agrees_with_float():
    rng = np.random.default_rng(7)
    for _ in range(25):
        d = int(rng.integers(1, 4))
        rows = [(tuple(rng.integers(-3, 4, d).astype(float)), float(rng.integers(-2, 6)), 0.0) for _ in range(6)]
        rows += box_rows(d)
        P = HPolytope.from_rows(d, rows)
        rf = feasible(P, 2.0)
        re = feasible(P, 2.0, exact=True)
        assert rf.is_feasible == re.is_feasible


def test_project_frozen(frozen):
    P = HPolytope.from_rows(
        2,
        [((1.0, 1.0), 1.0, 0.0), ((1.0, -1.0), 1.0, 0.0), ((-1.0, 0.0), 0.0, 0.0)],
    )
    Q = project(P, (0,))
    lo, hi = frozen["polytope"]["fm_project_interval"]
    val_lo, _ = minimize_linear(Q, (1.0,), 1.0)
    val_hi, _ = minimize_linear(Q, (-1.0,), 1.0)
    assert val_lo == pytest.approx(lo, abs=1e-9)
    assert -val_hi == pytest.approx(hi, abs=1e-9)


def test_chebyshev_center_frozen(frozen):
    P = HPolytope.from_rows(
        2,
        [((-1.0, 0.0), 0.0, 0.0), ((0.0, -1.0), 0.0, 0.0), ((1.0, 1.0), 1.0, 0.0)],
    )
    c = chebyshev_center(P, 1.0)
    want = frozen["polytope"]["cheb_simplex"]
    assert np.allclose(c, want, atol=1e-7)


def test_helly_intervals_frozen(frozen):
    sets = [interval(0, 2), interval(1, 3), interval(2, 4)]
    rep = helly_check(sets, 2, exact=True, M=1.0)
    assert rep["all_k_subfamilies_feasible"] and rep["full_feasible"] and rep["helly_consistent"]
    pt = frozen["polytope"]["helly_intervals_point"]
    assert all(s.member((pt,), 1.0) for s in sets)


def test_helly_failure_needs_low_width():
    # three pairwise-overlapping but jointly empty sets cannot exist in R^1
    # (Helly with k = 2); a genuinely disjoint pair must be flagged
    sets = [interval(0, 1), interval(2, 3)]
    rep = helly_check(sets, 2, exact=True, M=1.0)
    assert not rep["all_k_subfamilies_feasible"]
    assert rep["helly_consistent"]


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_helly_property_random_exact(d, seed):
    # d+1-wise feasibility implies full feasibility for convex sets in R^d
    rng = np.random.default_rng(seed)
    sets = []
    for _ in range(int(rng.integers(d + 2, d + 5))):
        center = rng.integers(-2, 3, d).astype(float)
        rows = [r for r in box_rows(d)]
        shifted = []
        for a, b0, b1 in rows:
            shifted.append((a, b0 + float(np.dot(a, center)), b1))
        sets.append(HPolytope.from_rows(d, shifted))
    rep = helly_check(sets, d + 1, exact=True, M=1.5)
    assert rep["helly_consistent"]


def test_exact_lp_rational():
    from fractions import Fraction

    status, x, val = exact_lp(
        [[Fraction(1)], [Fraction(-1)]],
        [Fraction(1), Fraction(0)],
        c=[Fraction(1)],
    )
    assert status == "optimal"
    assert x == [Fraction(0)] and val == Fraction(0)


def test_json_round_trip():
    P = interval(-0.5, 2.5)
    Q = polytope_from_json(polytope_to_json(P))
    assert Q.dim == P.dim and Q.rows == P.rows


def test_guard_on_fm_blowup():
    # eliminating 13 > FM_ELIMINATION_GUARD coordinates must refuse up front
    rng = np.random.default_rng(0)
    rows = [(tuple(rng.uniform(-1, 1, 14)), 1.0, 0.0) for _ in range(20)]
    P = HPolytope.from_rows(14, rows)
    with pytest.raises(GuardExceeded):
        project(P, (0,), exact=True)
