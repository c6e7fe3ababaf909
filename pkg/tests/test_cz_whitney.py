"""Dyadic decomposition, partitions of unity, gluing, Whitney extension."""

from fractions import Fraction

import numpy as np
import pytest

from whitsel.jet_core import (
    GlobalConfig,
    IndexSet,
    Jet,
    WhitneyField,
    multiindices,
    taylor_transport,
)
from whitsel.shape_field import make_interp_field
from whitsel.cz_whitney import (
    DyadicCube,
    annulus_profile,
    build_pou,
    cz_decompose,
    export_grid_csv,
    falling_profile,
    glue,
    nonneg_witness,
    ok_predicate_basis,
    ok_simple,
    plateau_profile,
    region_for,
    smoothstep_coeffs,
    whitney_extend,
)

E_2PT = [(0.1,), (0.9,)]


def two_point_tree():
    return cz_decompose(region_for(E_2PT, pad=3.0), ok_simple(E_2PT, 1.0))


def test_decomposition_frozen(frozen):
    fz = frozen["cz"]["example_1d"]
    region = region_for(E_2PT, pad=3.0)
    assert region == ((-2.9,), (3.9,))
    assert [region[0][0], region[1][0]] == fz["region"]
    tree = two_point_tree()
    assert [[Q.level, Q.corner[0]] for Q in tree.roots] == fz["roots"]
    assert [[Q.level, Q.corner[0]] for Q in tree.leaves] == fz["leaves"]


def test_classification_types():
    tree = two_point_tree()
    tree.classify(E_2PT, 1.0)
    counts = {}
    for Q in tree.leaves:
        counts[tree.tags[Q]] = counts.get(tree.tags[Q], 0) + 1
    assert sorted(counts) == [1, 2, 3]
    assert sum(counts.values()) == len(tree.leaves)
    for Q in tree.leaves:
        if tree.tags[Q] == 1:
            assert tree.witness[Q] in E_2PT


def test_empty_set_gives_unit_leaves():
    tree0 = cz_decompose(((0.0,), (6.0,)), ok_simple([], 1.0))
    assert all(Q.level == 0 for Q in tree0.leaves)
    assert len(tree0.leaves) == 8


def test_smoothstep_and_profiles():
    assert smoothstep_coeffs(2) == tuple(Fraction(v) for v in (0, 0, 0, 10, -15, 6))
    prof = plateau_profile(0.0, 1.0, 1.0 / 128, 2)
    assert prof.deriv(-1.0, 0) == 0.0
    assert prof.deriv(0.5, 0) == 1.0
    assert prof.deriv(2.0, 0) == 0.0
    assert prof.deriv(0.0, 0) == pytest.approx(0.5, abs=1e-15)
    # C^2 junctions across every break
    for t0 in prof.breaks:
        for k in (0, 1, 2):
            assert prof.deriv(t0 - 1e-12, k) == pytest.approx(
                prof.deriv(t0 + 1e-12, k), abs=1e-4)
    # symbolic derivative vs central differences
    for t in np.linspace(-0.02, 1.02, 101):
        h = 1e-6
        fd = (prof.deriv(t + h, 0) - prof.deriv(t - h, 0)) / (2 * h)
        assert fd == pytest.approx(prof.deriv(t, 1), abs=1e-5)
    chi = falling_profile(0.25, 1.0, 2)
    assert chi.deriv(0.1, 0) == 1.0 and chi.deriv(1.5, 0) == 0.0
    phi = annulus_profile(1.0 / 16, 0.25, 4.0, 16.0, 2)
    assert phi.deriv(1.0, 0) == 1.0
    assert phi.deriv(0.05, 0) == 0.0 and phi.deriv(20.0, 0) == 0.0


def test_pou_verifies_and_crossover_sums_to_one():
    tree = two_point_tree()
    pou = build_pou(tree, m=2)
    assert pou.report["sum_ok"] and pou.report["support_ok"]
    t2 = cz_decompose(((0.0,), (2.0,)), ok_simple([], 1.0))
    assert len(t2.leaves) == 2
    p2 = build_pou(t2, m=2)
    for x in np.linspace(0.9, 1.1, 501):
        th = p2.theta_jets((x,))
        s = sum(float(P.deriv((0,))) for P in th.values())
        assert s == pytest.approx(1.0, abs=1e-12)


def test_pou_squared_mode():
    t2 = cz_decompose(((0.0,), (2.0,)), ok_simple([], 1.0))
    p2s = build_pou(t2, m=2, squared=True)
    for x in np.linspace(0.9, 1.1, 101):
        th = p2s.theta_jets((x,))
        s = sum(float(P.deriv((0,))) ** 2 for P in th.values())
        assert s == pytest.approx(1.0, abs=1e-12)


def test_glue_identical_payloads_reproduces_polynomial():
    tree = two_point_tree()
    pou = build_pou(tree, m=2)
    P_poly = Jet.from_derivs((0.0,), 2, {(0,): 1.0, (1,): 2.0, (2,): 6.0})
    F = glue(tree, pou, {Q: P_poly for Q in tree.leaves})
    for x in [(-1.3,), (0.1,), (0.9,), (2.7,)]:
        J = F.jet_at(x, 2)
        ref = taylor_transport(P_poly, x)
        for a in multiindices(1, 2):
            assert float(J.deriv(a)) == pytest.approx(float(ref.deriv(a)), abs=1e-9)
        assert F(x) == pytest.approx(P_poly.evaluate(x), abs=1e-11)
    # missing payload for the cube containing the query point
    F_bad = glue(tree, pou, {Q: P_poly for Q in tree.leaves[:5]})
    with pytest.raises(KeyError):
        F_bad.jet_at((3.0,), 2)


def test_nonneg_witness_zero_jets():
    wz = nonneg_witness(Jet.zeros((0.0,), 2), 1.0, "Cm", m=2)
    for x in np.linspace(-2, 2, 101):
        assert wz((x,)) == 0.0
    wz11 = nonneg_witness(Jet.zeros((0.0,), 1), 1.0, "Cm11", m=2)
    for x in np.linspace(-2, 2, 101):
        assert wz11((x,)) >= 0.0
    # chi * |x|^2 cushion on the plateau
    assert wz11((0.3,)) == pytest.approx(0.09, abs=1e-15)
    J = wz11.jet_at((0.0,), 1)
    assert float(J.deriv((0,))) == 0.0 and float(J.deriv((1,))) == 0.0


def test_nonneg_witness_cm11_boundary_jet():
    P1 = Jet((0.0,), 1, (0.25, 1.0))
    w1 = nonneg_witness(P1, 1.0, "Cm11", m=2)
    J0 = w1.jet_at((0.0,), 1)
    assert float(J0.deriv((0,))) == pytest.approx(0.25, abs=1e-15)
    assert float(J0.deriv((1,))) == pytest.approx(1.0, abs=1e-15)
    vals = np.array([w1((x,)) for x in np.linspace(-3, 3, 1201)])
    assert vals.min() >= 0.0
    # the cushion is exactly P + |x|^2 on the plateau
    for x in (-0.3, 0.0, 0.2, 0.45):
        assert w1((x,)) == pytest.approx(0.25 + x + x * x, abs=1e-15)
    # jets consistent with finite differences off the basepoint
    for x in (0.3, 0.7, 0.97):
        J = w1.jet_at((x,), 1)
        h = 1e-6
        fd = (w1((x + h,)) - w1((x - h,))) / (2 * h)
        assert float(J.deriv((0,))) == pytest.approx(w1((x,)), abs=1e-14)
        assert float(J.deriv((1,))) == pytest.approx(fd, abs=1e-5)


def test_nonneg_witness_cm_corrections():
    # strictly positive jet: all dyadic corrections vanish
    P2 = Jet.from_derivs((0.0,), 2, {(0,): 1.0, (1,): 1.0, (2,): 2.0})
    w2 = nonneg_witness(P2, 2.0, "Cm", m=2)
    assert all(b == 0.0 for b in w2.b)
    for x in (-0.3, 0.0, 0.4):
        assert w2((x,)) == pytest.approx(P2.evaluate((x,)), abs=1e-15)
    J0 = w2.jet_at((0.0,), 2)
    for a in multiindices(1, 2):
        assert float(J0.deriv(a)) == pytest.approx(float(P2.deriv(a)), abs=1e-15)
    # genuine dip -x^2/2: every shell needs b_k = 2^-2k / 2
    P3 = Jet.from_derivs((0.0,), 2, {(0,): 0.0, (1,): 0.0, (2,): -1.0})
    w3 = nonneg_witness(P3, 1.0, "Cm", m=2)
    assert w3.b[0] == pytest.approx(0.5, abs=1e-15)
    assert w3.b[3] == pytest.approx(0.5 / 64, abs=1e-15)
    vals = np.array([w3((x,)) for x in np.linspace(-3, 3, 2001)])
    assert vals.min() >= -1e-12
    J0 = w3.jet_at((0.0,), 2)
    for a in multiindices(1, 2):
        assert float(J0.deriv(a)) == pytest.approx(float(P3.deriv(a)), abs=1e-15)


def test_whitney_extend_singleton_and_plain():
    Fz = whitney_extend(WhitneyField([Jet.zeros((0.0,), 1)]), m=2)
    for x in np.linspace(-4, 4, 51):
        assert Fz((x,)) == 0.0
    f = lambda t: 1 + 2 * t + 3 * t * t
    fp = lambda t: 2 + 6 * t
    E3 = [0.0, 0.6, 1.3]
    W3 = WhitneyField([Jet((t,), 1, (f(t), fp(t))) for t in E3])
    F3 = whitney_extend(W3, m=2)
    for t in E3:
        J = F3.jet_at((t,), 1)
        assert float(J.deriv((0,))) == pytest.approx(f(t), abs=1e-9)
        assert float(J.deriv((1,))) == pytest.approx(fp(t), abs=1e-9)
    rep = F3.measure_norm(samples_per_axis=40)
    assert set(rep) >= {"sup_derivs", "grid_min", "samples_per_axis"}


def test_whitney_extend_nonneg():
    W2 = WhitneyField([Jet((0.0,), 1, (0.25, 1.0)), Jet((1.0,), 1, (0.25, -1.0))])
    Fn = whitney_extend(W2, m=2, nonneg={"M": 1.0, "flavor": "Cm11"})
    grid = np.linspace(-5.0, 6.0, 3001)
    fmin = min(Fn((x,)) for x in grid)
    assert fmin >= -1e-9
    for z in ((0.0,), (1.0,)):
        J = Fn.jet_at(z, 1)
        P = W2[z]
        for a in multiindices(1, 1):
            assert float(J.deriv(a)) == pytest.approx(float(P.deriv(a)), abs=1e-9)


def test_ok_predicate_basis_wiring():
    field = make_interp_field(tuple((x,) for x in (0.1, 0.9)), (0.0, 0.0), m=2)
    Q0 = DyadicCube(3, (-1,))
    params = {
        "eps": 0.25,
        "A": 32.0,
        "M0": 1.0,
        "P0": Jet.zeros((0.5,), 1),
        "x0": (0.5,),
        "Q0": Q0,
        "A_set": IndexSet.empty(2, 1),
    }
    okb = ok_predicate_basis(field, E_2PT, params)
    assert okb(DyadicCube(-2, (0,)))       # sees one point only
    assert not okb(DyadicCube(3, (2,)))    # 5Q escapes 5Q0
    q_both = DyadicCube(0, (0,))           # 5Q holds both points
    assert okb(q_both)
    for child in q_both.children():
        assert okb(child)
    # full index set: no strict refinement candidate remains
    okf = ok_predicate_basis(field, E_2PT, dict(params, A_set=IndexSet.full(2, 1)))
    assert not okf(q_both)
    assert okf(DyadicCube(-2, (0,)))
    # decomposition of the base cube: 1 leaf vs a genuine split
    tree_b = cz_decompose((Q0.lo, Q0.hi), okb)
    assert len(tree_b.leaves) == 1 and tree_b.leaves[0] == Q0
    tree_bf = cz_decompose((Q0.lo, Q0.hi), okf)
    assert len(tree_bf.leaves) > 1
    assert all(Q.level < 3 for Q in tree_bf.leaves)


def test_export_grid_csv(tmp_path):
    W = WhitneyField([Jet((0.0,), 1, (1.0, 2.0)), Jet((1.0,), 1, (3.0, 2.0))])
    F = whitney_extend(W, m=2)
    path = tmp_path / "grid.csv"
    export_grid_csv(str(path), F, [(x,) for x in np.linspace(0, 1, 5)],
                    betas=[(0,), (1,)])
    lines = path.read_text().splitlines()
    assert len(lines) == 6
    assert lines[0].count(",") == lines[1].count(",")
