"""Selection solvers: min-M subsets, finiteness scans, global extension."""

import math

import numpy as np
import pytest

from whitsel.jet_core import GlobalConfig, Jet, whitney_seminorm
from whitsel.polytope import HPolytope
from whitsel.selection_solver import (
    PointConstraint,
    SelectionInstance,
    finiteness_scan,
    gamma_fp_scan,
    lift_instance,
    min_M_subset,
    solve_global,
)

from helpers import grid_points, random_equality_instance


def eq_inst(m, pts, vals, D=1, flavor="Cm11"):
    cons = [PointConstraint("equality", v) for v in vals]
    return SelectionInstance(GlobalConfig(m, 1, D), [(p,) for p in pts], cons, flavor)


def square(lo0, hi0, lo1, hi1):
    rows = [
        ((1.0, 0.0), hi0, 0.0),
        ((-1.0, 0.0), -lo0, 0.0),
        ((0.0, 1.0), hi1, 0.0),
        ((0.0, -1.0), -lo1, 0.0),
    ]
    return HPolytope.from_rows(2, rows)


def test_singleton_value_norm():
    inst = eq_inst(2, [0.0], [-2.5])
    M, W = min_M_subset(inst, inst.E)
    assert M == pytest.approx(2.5, abs=1e-9)
    assert W[(0.0,)].deriv((0,)) == -2.5


def test_pair_min_M_frozen(frozen):
    inst = eq_inst(1, [0.0, 1.0], [0.0, 1.0])
    M, _ = min_M_subset(inst, inst.E)
    assert M == pytest.approx(frozen["selection"]["pair_m1_minM"], abs=1e-9)


def test_zero_data_zero_norm():
    inst = eq_inst(2, [0.0, 0.5, 1.0], [0.0, 0.0, 0.0])
    M, _ = min_M_subset(inst, inst.E)
    assert abs(M) < 1e-12


def test_tent_min_M_frozen(frozen):
    t = frozen["selection"]["tent_m2"]
    inst = eq_inst(2, t["E"], t["f"])
    M, W = min_M_subset(inst, inst.E)
    assert abs(M - t["M_star_grid"]) <= t["resolution"]
    assert whitney_seminorm(W) <= M + 1e-9


def test_exact_matches_float_on_tent(frozen):
    t = frozen["selection"]["tent_m2"]
    inst = eq_inst(2, t["E"], t["f"])
    Mf, _ = min_M_subset(inst, inst.E)
    Me, _ = min_M_subset(inst, inst.E, exact=True)
    assert Mf == pytest.approx(float(Me), abs=1e-9)


def test_finiteness_frozen_and_invariants(frozen):
    t = frozen["selection"]["tight_ratio_instance"]
    inst = eq_inst(1, t["E"], t["f"])
    rep = finiteness_scan(inst, k_max=3)
    assert rep.M_k[3] == pytest.approx(t["M_k"], abs=1e-9)
    assert rep.M_global == pytest.approx(t["M_global"], abs=1e-9)
    assert rep.ratio >= 1.0
    rep_full = finiteness_scan(inst, k_max=len(inst.E))
    assert rep_full.M_k[len(inst.E)] == pytest.approx(rep_full.M_global, abs=1e-12)


def test_finiteness_worker_determinism(frozen):
    t = frozen["selection"]["tight_ratio_instance"]
    inst = eq_inst(1, t["E"], t["f"])
    rep1 = finiteness_scan(inst, k_max=3)
    rep3 = finiteness_scan(inst, k_max=3, workers=3)
    assert rep1.to_json() == rep3.to_json()


def test_finiteness_monotone_random():
    rng = np.random.default_rng(5)
    for _ in range(4):
        inst = random_equality_instance(rng, 1, int(rng.integers(1, 3)), 5)
        rep = finiteness_scan(inst, k_max=len(inst.E))
        ks = sorted(rep.M_k)
        for a, b in zip(ks, ks[1:]):
            assert rep.M_k[a] <= rep.M_k[b] + 1e-9
        assert rep.M_global >= rep.M_k[ks[-1]] - 1e-9


def test_gamma_fp_scan_frozen(frozen):
    t = frozen["selection"]["gamma_fp_incompat"]
    inst = eq_inst(1, t["E"], t["f"])
    table = gamma_fp_scan(inst, (t["E"][0],), t["M0"], 1, exact=True, helly=True)
    assert [e["nonempty"] for e in table] == t["levels"]
    assert all(e["helly"]["agree"] for e in table if "helly" in e)


def test_gamma_fp_scan_feasible_stays_nonempty():
    inst = eq_inst(2, [0.0, 1.0, 2.0], [0.0, 1.0, 0.0])
    table = gamma_fp_scan(inst, (1.0,), 2.0, 2, exact=True, helly=True)
    assert all(e["nonempty"] for e in table)
    assert [e["l"] for e in table] == [0, 1, 2]


def test_solve_global_equality():
    inst = eq_inst(2, [0.0, 0.6, 1.3], [1.0, 2.2, 4.07])
    M, F, diag = solve_global(inst)
    for x in inst.E:
        assert F(x) == pytest.approx(inst.constraints[x].payload[0], abs=1e-8)
    assert diag["worst_equality_residual"] <= 1e-8
    assert diag["norm_ratio"] >= 0.0 and math.isfinite(diag["norm_ratio"])


def test_nonneg_constant_needs_no_cuts():
    cons = [PointConstraint("nonneg", 0.25), PointConstraint("nonneg", 0.25)]
    inst = SelectionInstance(GlobalConfig(2, 1), [(0.0,), (1.0,)], cons, "Cm11")
    M, _ = min_M_subset(inst, inst.E)
    assert M == pytest.approx(0.25, abs=1e-9)


def test_nonneg_zero_point_forces_gradient_face():
    cons = [PointConstraint("nonneg", 0.25), PointConstraint("nonneg", 0.0)]
    inst = SelectionInstance(GlobalConfig(2, 1), [(0.0,), (0.5,)], cons, "Cm11")
    M, W = min_M_subset(inst, inst.E)
    assert W[(0.5,)].deriv((1,)) == 0.0
    # reverse pair row |P_1(0) - P_0(0)| = 0.25 <= M/4 forces M = 1
    assert M == pytest.approx(1.0, abs=1e-7)
    _, F, diag = solve_global(inst)
    assert diag["grid_min"] >= -1e-9
    assert F((0.0,)) == pytest.approx(0.25, abs=1e-8)
    assert abs(F((0.5,))) <= 1e-8


def test_nonneg_tent_with_cuts():
    cons = [PointConstraint("nonneg", v) for v in (0.25, 1.0, 0.25)]
    inst = SelectionInstance(GlobalConfig(2, 1), [(0.0,), (1.0,), (2.0,)], cons, "Cm11")
    _, _, diag = solve_global(inst)
    assert diag["grid_min"] >= -1e-9
    assert diag["worst_equality_residual"] <= 1e-8


def test_nonneg_cm_flavor_uses_degree_m():
    cons = [PointConstraint("nonneg", v) for v in (0.5, 0.0)]
    inst = SelectionInstance(GlobalConfig(2, 1), [(0.0,), (1.0,)], cons, "Cm")
    M, W = min_M_subset(inst, inst.E)
    assert W.degree == 2
    _, _, diag = solve_global(inst)
    assert diag["grid_min"] >= -1e-9


def test_nonneg_m3_quadratic_slot_face():
    cons = [PointConstraint("nonneg", v) for v in (1.0, 0.0)]
    inst = SelectionInstance(GlobalConfig(3, 1), [(0.0,), (1.0,)], cons, "Cm11")
    M, W = min_M_subset(inst, inst.E)
    P = W[(1.0,)]
    assert P.deriv((1,)) == 0.0 and P.deriv((2,)) >= 0.0
    _, _, diag = solve_global(inst)
    assert diag["grid_min"] >= -1e-9


def test_nonneg_two_dims():
    cons = [PointConstraint("nonneg", v) for v in (0.5, 0.25, 0.75)]
    inst = SelectionInstance(
        GlobalConfig(2, 2), [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)], cons, "Cm11"
    )
    M, _ = min_M_subset(inst, inst.E)
    assert M >= 0.0
    _, _, diag = solve_global(inst, grid_samples=12)
    assert diag["grid_min"] >= -1e-9


def test_vector_equality():
    cons = [
        PointConstraint("equality", (0.0, 1.0)),
        PointConstraint("equality", (1.0, 0.0)),
    ]
    inst = SelectionInstance(GlobalConfig(1, 1, 2), [(0.0,), (1.0,)], cons)
    M, Ws = min_M_subset(inst, inst.E)
    assert M == pytest.approx(1.0, abs=1e-9)
    assert len(Ws) == 2
    _, F, diag = solve_global(inst)
    v0, v1 = F((0.0,)), F((1.0,))
    assert max(abs(v0[0]), abs(v0[1] - 1.0), abs(v1[0] - 1.0), abs(v1[1])) <= 1e-8
    assert diag["euclid_factor"] == math.sqrt(2.0)


def test_vector_convex_targets():
    cons = [
        PointConstraint("convex", square(2.0, 3.0, 0.0, 1.0)),
        PointConstraint("convex", square(-1.0, 0.0, 0.0, 1.0)),
    ]
    inst = SelectionInstance(GlobalConfig(1, 1, 2), [(0.0,), (1.0,)], cons)
    M, _ = min_M_subset(inst, inst.E)
    # nearest values 2 and 0 in coordinate 0, one unit apart
    assert M == pytest.approx(2.0, abs=1e-9)
    _, _, diag = solve_global(inst)
    assert diag["worst_target_slack"] >= -1e-8


def test_lift_round_trip_and_membership():
    cons = [
        PointConstraint("convex", square(2.0, 3.0, 0.0, 1.0)),
        PointConstraint("convex", square(-1.0, 0.0, 0.0, 1.0)),
    ]
    inst = SelectionInstance(GlobalConfig(1, 1, 2), [(0.0,), (1.0,)], cons)
    field, lift, unlift = lift_instance(inst)
    vj = (
        Jet.from_derivs((0.0,), 0, {(0,): 2.5}),
        Jet.from_derivs((0.0,), 0, {(0,): 0.5}),
    )
    R = lift(vj)
    assert R.degree == 1 and R.n == 3
    back = unlift(R)
    for a, b in zip(vj, back):
        assert a.basepoint == b.basepoint
        assert np.allclose(a.derivs, b.derivs)
    assert R.deriv((0, 1, 0)) == 2.5 and R.deriv((0, 0, 1)) == 0.5
    assert R.deriv((0, 0, 0)) == 0.0
    # value slots inside K(0) = [2,3] x [0,1] pass, outside fail
    assert field.member((0.0, 0.0, 0.0), 2.5, R)
    assert not field.member((0.0, 0.0, 0.0), 2.0, R)
    bad = lift((Jet.from_derivs((0.0,), 0, {(0,): 5.0}), vj[1]))
    assert not field.member((0.0, 0.0, 0.0), 10.0, bad)


def test_lift_random_round_trip_exact():
    rng = np.random.default_rng(9)
    for _ in range(10):
        D = int(rng.integers(1, 3))
        m = int(rng.integers(1, 3))
        K = square(-2.0, 2.0, -2.0, 2.0) if D == 2 else HPolytope.from_rows(
            1, [((1.0,), 2.0, 0.0), ((-1.0,), 2.0, 0.0)])
        inst = SelectionInstance(
            GlobalConfig(m, 1, D), [(0.0,), (1.0,)],
            [PointConstraint("convex", K)] * 2)
        _, lift, unlift = lift_instance(inst)
        x = (float(rng.uniform(0, 1)),)
        vj = tuple(Jet(x, m - 1, rng.uniform(-3, 3, m)) for _ in range(D))
        back = unlift(lift(vj))
        for a, b in zip(vj, back):
            assert tuple(a.derivs) == tuple(b.derivs)


def test_unbounded_K_rejected():
    half = HPolytope.from_rows(2, [((1.0, 0.0), 1.0, 0.0)])
    inst = SelectionInstance(
        GlobalConfig(1, 1, 2), [(0.0,)], [PointConstraint("convex", half)])
    with pytest.raises(ValueError, match="unbounded"):
        lift_instance(inst)


def test_empty_K_rejected():
    bad_K = HPolytope.from_rows(
        2, [((1.0, 0.0), -1.0, 0.0), ((-1.0, 0.0), -1.0, 0.0)])
    with pytest.raises(ValueError, match="empty"):
        SelectionInstance(
            GlobalConfig(1, 1, 2), [(0.0,)], [PointConstraint("convex", bad_K)])


def test_instance_validation():
    with pytest.raises(ValueError):
        SelectionInstance(GlobalConfig(1, 1), [(0.0,), (0.0,)],
                          [PointConstraint("equality", 0.0)] * 2)
    with pytest.raises(ValueError):
        SelectionInstance(GlobalConfig(1, 1), [(0.0,), (1.0,)],
                          [PointConstraint("nonneg", 0.5),
                           PointConstraint("equality", 0.5)])
    with pytest.raises(ValueError):
        PointConstraint("mystery", 0.0)


def test_min_M_matches_seminorm_random():
    # for equality data the optimal M equals the Whitney seminorm of the
    # returned field, and no sub-subset can beat it
    rng = np.random.default_rng(13)
    for _ in range(5):
        inst = random_equality_instance(rng, 1, 2, 4)
        M, W = min_M_subset(inst, inst.E)
        assert whitney_seminorm(W) <= M + 1e-7
        sub = inst.E[:2]
        Ms, _ = min_M_subset(inst, sub)
        assert Ms <= M + 1e-9
