import json
import math

import numpy as np

from src.whitsel.jet_core import (
    Jet,
    IndexSet,
    WhitneyField,
    multiindices,
    taylor_transport,
)
from src.whitsel.shape_field import GlobalConfig, make_interp_field
from src.whitsel.cz_whitney import (
    DyadicCube,
    Profile1D,
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

fz = json.load(open("tests/oracles/frozen.json"))["cz"]["example_1d"]

# --- frozen decomposition -------------------------------------------------
E = [(0.1,), (0.9,)]
region = region_for(E, pad=3.0)
assert region == ((-2.9,), (3.9,)), region
assert list(region[0]) + list(region[1]) == fz["region"] or [region[0][0], region[1][0]] == fz["region"]
tree = cz_decompose(region, ok_simple(E, 1.0))
got_roots = [[Q.level, Q.corner[0]] for Q in tree.roots]
assert got_roots == fz["roots"], got_roots
got = [[Q.level, Q.corner[0]] for Q in tree.leaves]
assert got == fz["leaves"], (len(got), got[:5], fz["leaves"][:5])
print("frozen 27-leaf decomposition: MATCH")

tree.classify(E, 1.0)
tags = sorted(set(tree.tags.values()))
assert tags == [1, 2, 3], tags
for Q in tree.leaves:
    if tree.tags[Q] == 1:
        assert tree.witness[Q] in [(0.1,), (0.9,)]
print("classification types:", {t: sum(1 for v in tree.tags.values() if v == t) for t in tags})

# --- empty point set ------------------------------------------------------
tree0 = cz_decompose(((0.0,), (6.0,)), ok_simple([], 1.0))
assert all(Q.level == 0 for Q in tree0.leaves), [Q.level for Q in tree0.leaves]
assert len(tree0.leaves) == 8  # root side 8 splits into unit cubes
print("empty-set decomposition: unit leaves ok")

# --- profiles -------------------------------------------------------------
assert smoothstep_coeffs(2) == tuple(
    __import__("fractions").Fraction(v) for v in (0, 0, 0, 10, -15, 6)
)
prof = plateau_profile(0.0, 1.0, 1.0 / 128, 2)
assert prof.deriv(-1.0, 0) == 0.0 and prof.deriv(0.5, 0) == 1.0 and prof.deriv(2.0, 0) == 0.0
assert abs(prof.deriv(0.0, 0) - 0.5) < 1e-15
# C^2 junctions: derivatives of order <= 2 continuous across breaks
for t0 in prof.breaks:
    for k in (0, 1, 2):
        left = prof.deriv(t0 - 1e-12, k)
        right = prof.deriv(t0 + 1e-12, k)
        assert abs(left - right) < 1e-4, (t0, k, left, right)
# derivative consistency against finite differences
for t in np.linspace(-0.02, 1.02, 211):
    h = 1e-6
    fd = (prof.deriv(t + h, 0) - prof.deriv(t - h, 0)) / (2 * h)
    assert abs(fd - prof.deriv(t, 1)) < 1e-5, (t, fd, prof.deriv(t, 1))
chi = falling_profile(0.25, 1.0, 2)
assert chi.deriv(0.1, 0) == 1.0 and chi.deriv(1.5, 0) == 0.0
phi = annulus_profile(1.0 / 16, 0.25, 4.0, 16.0, 2)
assert phi.deriv(1.0, 0) == 1.0 and phi.deriv(0.05, 0) == 0.0 and phi.deriv(20.0, 0) == 0.0
print("profiles ok")

# --- partition of unity ---------------------------------------------------
pou = build_pou(tree, m=2)
print("pou report:", {k: (round(v, 14) if isinstance(v, float) else v) for k, v in pou.report.items()})
assert pou.report["sum_ok"] and pou.report["support_ok"]

# two-leaf crossover: fine scan of the overlap zone
t2 = cz_decompose(((0.0,), (2.0,)), ok_simple([], 1.0))
p2 = build_pou(t2, m=2)
assert len(t2.leaves) == 2
for x in np.linspace(0.9, 1.1, 1001):
    th = p2.theta_jets((x,))
    s = sum(float(P.deriv((0,))) for P in th.values())
    assert abs(s - 1.0) < 1e-12, (x, s)
print("two-leaf crossover sum ok")

# squared mode
p2s = build_pou(t2, m=2, squared=True)
for x in np.linspace(0.9, 1.1, 101):
    th = p2s.theta_jets((x,))
    s = sum(float(P.deriv((0,))) ** 2 for P in th.values())
    assert abs(s - 1.0) < 1e-12, (x, s)
print("squared mode ok")

# --- gluing ---------------------------------------------------------------
P_poly = Jet.from_derivs((0.0,), 2, {(0,): 1.0, (1,): 2.0, (2,): 6.0})
payloads = {Q: P_poly for Q in tree.leaves}
F = glue(tree, pou, payloads)
for x in [(-1.3,), (0.1,), (0.9,), (2.7,)]:
    J = F.jet_at(x, 2)
    ref = taylor_transport(P_poly, x)
    err = max(abs(float(J.deriv(a)) - float(ref.deriv(a))) for a in multiindices(1, 2))
    assert err < 1e-9, (x, err)
    assert abs(F(x) - P_poly.evaluate(x)) < 1e-11
print("identical-payload glue reproduces the polynomial")

# missing payload raises
F_bad = glue(tree, pou, {Q: P_poly for Q in tree.leaves[:5]})
try:
    F_bad.jet_at((3.0,), 2)
    raise SystemExit("expected KeyError")
except KeyError as e:
    print("missing payload ->", str(e)[:60])

# --- nonneg witnesses -----------------------------------------------------
Zm = Jet.zeros((0.0,), 2)
wz = nonneg_witness(Zm, 1.0, "Cm", m=2)
for x in np.linspace(-2, 2, 401):
    assert wz((x,)) == 0.0
print("zero jet (Cm) -> identically zero witness")

Z = Jet.zeros((0.0,), 1)
wz11 = nonneg_witness(Z, 1.0, "Cm11", m=2)
for x in np.linspace(-2, 2, 401):
    assert wz11((x,)) >= 0.0
assert abs(wz11((0.3,)) - 0.09) < 1e-15  # chi * |x|^2 on the plateau
J = wz11.jet_at((0.0,), 1)
assert float(J.deriv((0,))) == 0.0 and float(J.deriv((1,))) == 0.0
print("zero jet (Cm11) -> chi * |x|^m cushion, zero jet at base")

P1 = Jet((0.0,), 1, (0.25, 1.0))
w1 = nonneg_witness(P1, 1.0, "Cm11", m=2)
J0 = w1.jet_at((0.0,), 1)
assert abs(float(J0.deriv((0,))) - 0.25) < 1e-15 and abs(float(J0.deriv((1,))) - 1.0) < 1e-15
xs = np.linspace(-3, 3, 2001)
vals = np.array([w1((x,)) for x in xs])
assert vals.min() >= 0.0, vals.min()
# inside the chi plateau the witness is exactly P + |x|^2
for x in (-0.3, 0.0, 0.2, 0.45):
    assert abs(w1((x,)) - (0.25 + x + x * x)) < 1e-15
# jets match finite differences away from the basepoint
for x in (0.3, 0.7, 0.97):
    J = w1.jet_at((x,), 1)
    h = 1e-6
    fd = (w1((x + h,)) - w1((x - h,))) / (2 * h)
    assert abs(float(J.deriv((0,))) - w1((x,))) < 1e-14
    assert abs(float(J.deriv((1,))) - fd) < 1e-5, (x, float(J.deriv((1,))), fd)
print("Cm11 witness: jet + nonnegativity ok")

# Cm flavor, strictly positive jet -> all corrections vanish
P2 = Jet.from_derivs((0.0,), 2, {(0,): 1.0, (1,): 1.0, (2,): 2.0})
w2 = nonneg_witness(P2, 2.0, "Cm", m=2)
assert all(b == 0.0 for b in w2.b), w2.b
for x in (-0.3, 0.0, 0.4):
    assert abs(w2((x,)) - P2.evaluate((x,))) < 1e-15
J0 = w2.jet_at((0.0,), 2)
for a in multiindices(1, 2):
    assert abs(float(J0.deriv(a)) - float(P2.deriv(a))) < 1e-15
print("Cm witness with positive jet: corrections all zero, jet exact")

# Cm flavor with a genuine dip: P = -x^2/2 needs every shell corrected
P3 = Jet.from_derivs((0.0,), 2, {(0,): 0.0, (1,): 0.0, (2,): -1.0})
w3 = nonneg_witness(P3, 1.0, "Cm", m=2)
assert abs(w3.b[0] - 0.5) < 1e-15 and abs(w3.b[3] - 0.5 / 64) < 1e-15, w3.b[:4]
vals = np.array([w3((x,)) for x in np.linspace(-3, 3, 4001)])
assert vals.min() >= -1e-12, vals.min()
J0 = w3.jet_at((0.0,), 2)
for a in multiindices(1, 2):
    assert abs(float(J0.deriv(a)) - float(P3.deriv(a))) < 1e-15, a
print("Cm witness with dip: b_k =", [round(b, 6) for b in w3.b[:6]], "min =", vals.min())

# --- whitney extension ----------------------------------------------------
W1 = WhitneyField([Jet.zeros((0.0,), 1)])
Fz = whitney_extend(W1, m=2)
for x in np.linspace(-4, 4, 101):
    assert Fz((x,)) == 0.0
print("singleton zero field -> zero extension")

W2 = WhitneyField([Jet((0.0,), 1, (0.25, 1.0)), Jet((1.0,), 1, (0.25, -1.0))])
Fn = whitney_extend(W2, m=2, nonneg={"M": 1.0, "flavor": "Cm11"})
grid = np.linspace(-5.0, 6.0, 10001)
fmin = min(Fn((x,)) for x in grid)
assert fmin >= -1e-9, fmin
for z, P in [((0.0,), W2[(0.0,)]), ((1.0,), W2[(1.0,)])]:
    J = Fn.jet_at(z, 1)
    err = max(abs(float(J.deriv(a)) - float(P.deriv(a))) for a in multiindices(1, 1))
    assert err < 1e-9, (z, err)
print("nonneg extension: grid min =", fmin, ", data jets exact")

# plain extension with polynomial data
f = lambda t: 1 + 2 * t + 3 * t * t
fp = lambda t: 2 + 6 * t
E3 = [0.0, 0.6, 1.3]
W3 = WhitneyField([Jet((t,), 1, (f(t), fp(t))) for t in E3])
F3 = whitney_extend(W3, m=2)
for t in E3:
    J = F3.jet_at((t,), 1)
    assert abs(float(J.deriv((0,))) - f(t)) < 1e-9
    assert abs(float(J.deriv((1,))) - fp(t)) < 1e-9
rep = F3.measure_norm(samples_per_axis=60)
print("extension norm report:", {k: rep[k] for k in ("grid_min",)}, {k: round(v, 4) for k, v in rep["sup_derivs"].items()})

# --- basis OK predicate wiring ---------------------------------------------
cfg = GlobalConfig(m=2, n=1)
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
okb = ok_predicate_basis(field, E, params)
q_small = DyadicCube(-2, (0,))     # [0, .25): sees only 0.1 in its 5-dilation
assert okb(q_small)
q_escape = DyadicCube(3, (2,))     # far to the right: 5Q escapes 5Q0
assert not okb(q_escape)
q_both = DyadicCube(0, (0,))       # [0, 1): 5Q holds both points
res = okb(q_both)
print("two-point cube OK via basis candidates:", res, okb.cache[q_both])
assert res, okb.cache[q_both]

# a cube that is OK must have OK children (monotone)
for child in q_both.children():
    assert okb(child)
print("basis predicate monotone on the checked sample")

# full A_set leaves no candidates -> only the count route remains
params_full = dict(params, A_set=IndexSet.full(2, 1))
okf = ok_predicate_basis(field, E, params_full)
assert not okf(q_both)
assert okf(q_small)
print("full index set: no strict refinement available, as expected")

# decomposing the base cube itself under the basis predicate
tree_b = cz_decompose((Q0.lo, Q0.hi), ok_predicate_basis(field, E, params))
assert len(tree_b.leaves) == 1 and tree_b.leaves[0] == Q0
tree_bf = cz_decompose((Q0.lo, Q0.hi), ok_predicate_basis(field, E, params_full))
assert len(tree_bf.leaves) > 1
assert all(okf_leaf.level < 3 for okf_leaf in tree_bf.leaves)
print("base-cube decomposition:", len(tree_b.leaves), "leaf /", len(tree_bf.leaves), "leaves")

# --- csv export -------------------------------------------------------------
export_grid_csv("/tmp/smoke_grid.csv", F3, [(x,) for x in np.linspace(0, 1, 5)], betas=[(0,), (1,)])
print(open("/tmp/smoke_grid.csv").read().splitlines()[0])

print("ALL CZ SMOKE CHECKS PASSED")
