import json
import math

import numpy as np

from whitsel.jet_core import GlobalConfig, Jet, whitney_seminorm
from whitsel.polytope import HPolytope, box_rows
from whitsel.selection_solver import (
    PointConstraint,
    SelectionInstance,
    finiteness_scan,
    gamma_fp_scan,
    lift_instance,
    min_M_subset,
    solve_global,
)

frozen = json.load(open("tests/oracles/frozen.json"))["selection"]


def eq_inst(m, pts, vals, D=1, flavor="Cm11"):
    cons = [PointConstraint("equality", v) for v in vals]
    return SelectionInstance(GlobalConfig(m, 1, D), [(p,) for p in pts], cons, flavor)


# 1. singleton: M = |v|
inst = eq_inst(2, [0.0], [-2.5])
M, W = min_M_subset(inst, inst.E)
assert abs(M - 2.5) < 1e-9, M
assert W[(0.0,)].deriv((0,)) == -2.5

# 2. pair m=1 f=(0,1): frozen 1.0
inst = eq_inst(1, [0.0, 1.0], [0.0, 1.0])
M, W = min_M_subset(inst, inst.E)
assert abs(M - frozen["pair_m1_minM"]) < 1e-9, M

# 3. f == 0 -> M = 0
inst = eq_inst(2, [0.0, 0.5, 1.0], [0.0, 0.0, 0.0])
M, W = min_M_subset(inst, inst.E)
assert abs(M) < 1e-12, M

# 4. tent m=2: frozen M* = 1.0 at resolution 1e-3
t = frozen["tent_m2"]
inst = eq_inst(2, t["E"], t["f"])
M, W = min_M_subset(inst, inst.E)
assert abs(M - t["M_star_grid"]) <= t["resolution"], M
assert whitney_seminorm(W) <= M + 1e-9

# 5. tight ratio instance + finiteness invariants
t = frozen["tight_ratio_instance"]
inst = eq_inst(1, t["E"], t["f"])
rep = finiteness_scan(inst, k_max=3)
assert abs(rep.M_k[3] - t["M_k"]) < 1e-9, rep.M_k
assert abs(rep.M_global - t["M_global"]) < 1e-9
assert rep.ratio >= 1.0
rep_full = finiteness_scan(inst, k_max=len(inst.E))
assert abs(rep_full.M_k[len(inst.E)] - rep_full.M_global) < 1e-12
rep_w = finiteness_scan(inst, k_max=3, workers=3)
assert rep_w.to_json() == rep.to_json()
print("finiteness:", rep.to_json())

# 6. gamma_fp_scan frozen incompatibility + helly cross-check
t = frozen["gamma_fp_incompat"]
inst = eq_inst(1, t["E"], t["f"])
table = gamma_fp_scan(inst, (t["E"][0],), t["M0"], 1, exact=True, helly=True)
got = [e["nonempty"] for e in table]
assert got == t["levels"], got
print("gamma_fp_scan:", table)

# feasible instance stays nonempty across levels
inst = eq_inst(2, [0.0, 1.0, 2.0], [0.0, 1.0, 0.0])
table = gamma_fp_scan(inst, (1.0,), 2.0, 2, exact=True, helly=True)
assert all(e["nonempty"] for e in table), table

# 7. solve_global scalar
inst = eq_inst(2, [0.0, 0.6, 1.3], [1.0, 2.2, 4.07])
M, F, diag = solve_global(inst)
for x in inst.E:
    assert abs(F(x) - inst.constraints[x].payload[0]) <= 1e-8
assert diag["worst_equality_residual"] <= 1e-8
print("solve_global eq:", M, diag["norm_ratio"])

# 8. nonneg: constant 0.25 needs M = 0.25, no cuts
cons = [PointConstraint("nonneg", 0.25), PointConstraint("nonneg", 0.25)]
inst = SelectionInstance(GlobalConfig(2, 1), [(0.0,), (1.0,)], cons, "Cm11")
M, W = min_M_subset(inst, inst.E)
assert abs(M - 0.25) < 1e-9, M

# 9. nonneg with a zero-valued point: gradient face forced
cons = [PointConstraint("nonneg", 0.25), PointConstraint("nonneg", 0.0)]
inst = SelectionInstance(GlobalConfig(2, 1), [(0.0,), (0.5,)], cons, "Cm11")
M, W = min_M_subset(inst, inst.E)
assert W[(0.5,)].deriv((1,)) == 0.0
# reverse pair row |P_1(0) - P_0(0)| = 0.25 <= M/4 forces M = 1
assert abs(M - 1.0) < 1e-7, M
M2, F, diag = solve_global(inst)
assert diag["grid_min"] >= -1e-9, diag
assert abs(F((0.0,)) - 0.25) <= 1e-8 and abs(F((0.5,))) <= 1e-8
print("nonneg zero-face:", M, diag["grid_min"], diag["norm_ratio"])

# 10. nonneg tent Cm11 via solve_global (cuts may fire)
cons = [PointConstraint("nonneg", v) for v in (0.25, 1.0, 0.25)]
inst = SelectionInstance(GlobalConfig(2, 1), [(0.0,), (1.0,), (2.0,)], cons, "Cm11")
M, F, diag = solve_global(inst)
assert diag["grid_min"] >= -1e-9
assert diag["worst_equality_residual"] <= 1e-8
print("nonneg tent:", M, diag["grid_min"])

# 11. nonneg Cm flavor m=2
cons = [PointConstraint("nonneg", v) for v in (0.5, 0.0)]
inst = SelectionInstance(GlobalConfig(2, 1), [(0.0,), (1.0,)], cons, "Cm")
M, W = min_M_subset(inst, inst.E)
assert W.degree == 2
M2, F, diag = solve_global(inst)
assert diag["grid_min"] >= -1e-9
print("nonneg Cm:", M, diag["grid_min"])

# 12. nonneg m=3 with zero point (quadratic slot face)
cons = [PointConstraint("nonneg", v) for v in (1.0, 0.0)]
inst = SelectionInstance(GlobalConfig(3, 1), [(0.0,), (1.0,)], cons, "Cm11")
M, W = min_M_subset(inst, inst.E)
P = W[(1.0,)]
assert P.deriv((1,)) == 0.0 and P.deriv((2,)) >= 0.0
M2, F, diag = solve_global(inst)
assert diag["grid_min"] >= -1e-9
print("nonneg m=3:", M, diag["grid_min"])

# 13. n=2 nonneg m=2 Cm11
cons = [PointConstraint("nonneg", v) for v in (0.5, 0.25, 0.75)]
inst = SelectionInstance(
    GlobalConfig(2, 2), [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)], cons, "Cm11"
)
M, W = min_M_subset(inst, inst.E)
M2, F, diag = solve_global(inst, grid_samples=12)
assert diag["grid_min"] >= -1e-9
print("nonneg n=2:", M, diag["grid_min"])

# 14. vector equality D=2
cons = [
    PointConstraint("equality", (0.0, 1.0)),
    PointConstraint("equality", (1.0, 0.0)),
]
inst = SelectionInstance(GlobalConfig(1, 1, 2), [(0.0,), (1.0,)], cons)
M, Ws = min_M_subset(inst, inst.E)
assert abs(M - 1.0) < 1e-9, M
assert len(Ws) == 2
M2, F, diag = solve_global(inst)
v0, v1 = F((0.0,)), F((1.0,))
assert max(abs(v0[0]), abs(v0[1] - 1.0), abs(v1[0] - 1.0), abs(v1[1])) <= 1e-8
assert diag["euclid_factor"] == math.sqrt(2.0)
print("vector eq:", M, diag["norm_ratio"])

# 15. convex targets D=2: K = square [l,u]^2 translated
def square(lo0, hi0, lo1, hi1):
    rows = [
        ((1.0, 0.0), hi0, 0.0),
        ((-1.0, 0.0), -lo0, 0.0),
        ((0.0, 1.0), hi1, 0.0),
        ((0.0, -1.0), -lo1, 0.0),
    ]
    return HPolytope.from_rows(2, rows)

cons = [
    PointConstraint("convex", square(2.0, 3.0, 0.0, 1.0)),
    PointConstraint("convex", square(-1.0, 0.0, 0.0, 1.0)),
]
inst = SelectionInstance(GlobalConfig(1, 1, 2), [(0.0,), (1.0,)], cons)
M, Ws = min_M_subset(inst, inst.E)
# values 2 and 0 in coordinate 0 one unit apart: M = 2 (value bound)
assert abs(M - 2.0) < 1e-9, M
M2, F, diag = solve_global(inst)
assert diag["worst_target_slack"] >= -1e-8
print("convex targets:", M, diag["residuals"])

# 16. lifting round trip + lifted field membership
field, lift, unlift = lift_instance(inst)
assert sorted(field.points) == [(0.0, 0.0, 0.0), (1.0, 0.0, 0.0)]
vj = (
    Jet.from_derivs((0.0,), 0, {(0,): 2.5}),
    Jet.from_derivs((0.0,), 0, {(0,): 0.5}),
)
R = lift(vj)
assert R.degree == 1 and R.n == 3
back = unlift(R)
for a, b in zip(vj, back):
    assert a.basepoint == b.basepoint and np.allclose(a.derivs, b.derivs)
assert R.deriv((0, 1, 0)) == 2.5 and R.deriv((0, 0, 1)) == 0.5
assert R.deriv((0, 0, 0)) == 0.0
# membership: value 0, gradient (2.5, 0.5) in K(0) = [2,3]x[0,1], slots <= M
assert field.member((0.0, 0.0, 0.0), 2.5, R)
assert not field.member((0.0, 0.0, 0.0), 2.0, R)  # slot 2.5 > 2
bad = lift((Jet.from_derivs((0.0,), 0, {(0,): 5.0}), vj[1]))
assert not field.member((0.0, 0.0, 0.0), 10.0, bad)  # gradient outside K

# unbounded K rejected
ub = HPolytope.from_rows(2, [((1.0, 0.0), 1.0, 0.0), ((0.0, 1.0), 1.0, 0.0), ((0.0, -1.0), 1.0, 0.0), ((-1.0, 0.0), 1.0, 0.0)])
okK = ub
half = HPolytope.from_rows(2, [((1.0, 0.0), 1.0, 0.0)])
try:
    lift_instance(
        SelectionInstance(
            GlobalConfig(1, 1, 2),
            [(0.0,)],
            [PointConstraint("convex", half)],
        )
    )
    raise SystemExit("unbounded K accepted")
except ValueError as e:
    assert "unbounded" in str(e)

# 17. infeasibility surfaces as error: empty K rejected at construction
try:
    bad_K = HPolytope.from_rows(2, [((1.0, 0.0), -1.0, 0.0), ((-1.0, 0.0), -1.0, 0.0)])
    PointConstraint("convex", bad_K)
    SelectionInstance(GlobalConfig(1, 1, 2), [(0.0,)], [PointConstraint("convex", bad_K)])
    raise SystemExit("empty K accepted")
except ValueError as e:
    assert "empty" in str(e)

# 18. exact arithmetic agreement on the tent
t = frozen["tent_m2"]
inst = eq_inst(2, t["E"], t["f"])
Mf, _ = min_M_subset(inst, inst.E)
Me, _ = min_M_subset(inst, inst.E, exact=True)
assert abs(Mf - Me) < 1e-9, (Mf, Me)

print("ALL SELECTION SMOKE CHECKS PASSED")
