"""Independent oracle computations for the worked-example values used in tests.

Run from the repository root:

    python tests/oracles/generate_frozen.py

Writes tests/oracles/frozen.json. Every value here is computed WITHOUT
importing the library under test: symbolic differentiation via sympy,
hand-rolled interval propagation, a standalone dyadic-cube recursion, and
closed-form geometry. The test suite loads the frozen file and compares
library output against it, so the two code paths never share arithmetic.
"""

import json
import math
import os
from fractions import Fraction

import sympy as sp


def fmt_idx(alpha):
    return "(" + ",".join(str(int(a)) for a in alpha) + ")"


def jet_of_expr(expr, syms, point, degree):
    """Raw derivatives d^a expr(point) for |a| <= degree, via sympy."""
    out = {}

    def rec(alpha, pos):
        if pos == len(syms):
            d = expr
            for s, k in zip(syms, alpha):
                if k:
                    d = sp.diff(d, s, k)
            val = d.subs(list(zip(syms, point)))
            out[fmt_idx(alpha)] = float(sp.nsimplify(val).evalf(30))
            return
        for k in range(degree - sum(alpha) + 1):
            rec(alpha + (k,), pos + 1)

    # enumerate alphas recursively
    def walk(prefix, remaining_syms, budget):
        if not remaining_syms:
            d = expr
            for s, k in zip(syms, prefix):
                if k:
                    d = sp.diff(d, s, k)
            val = d.subs(list(zip(syms, point)))
            out[fmt_idx(prefix)] = float(val.evalf(30))
            return
        for k in range(budget + 1):
            walk(prefix + (k,), remaining_syms[1:], budget - k)

    walk((), list(syms), degree)
    # drop entries above total order budget (walk already enforces it)
    return out


def oracle_jets():
    x, y = sp.symbols("x y")
    frozen = {}

    # x * x truncated to degree 2 (m=3, n=1)
    frozen["xx_m3n1"] = jet_of_expr(x * x, [x], [0], 2)

    # (1+x)^2 truncated to degree 1 (m=2, n=1): the x^2 term dies
    full = jet_of_expr((1 + x) ** 2, [x], [0], 1)
    frozen["one_plus_x_sq_m2n1"] = full

    # sqrt(1+x) to degree 1
    frozen["sqrt_one_plus_x_m2n1"] = jet_of_expr(sp.sqrt(1 + x), [x], [0], 1)

    # unity pair for S = x, c0 = 1/10, m=2, n=1
    q1 = jet_of_expr(sp.sqrt(sp.Rational(1, 2) + x / 10), [x], [0], 1)
    q2 = jet_of_expr(sp.sqrt(sp.Rational(1, 2) - x / 10), [x], [0], 1)
    frozen["unity_q1_m2n1"] = q1
    frozen["unity_q2_m2n1"] = q2
    # sum of squares of the truncated jets, re-truncated: must be exactly 1.
    t = sp.symbols("t")
    q1p = q1["(0)"] + q1["(1)"] * t
    q2p = q2["(0)"] + q2["(1)"] * t
    sos = sp.expand(q1p**2 + q2p**2)
    sos_trunc = sp.Poly(sos, t).as_expr() - sp.Poly(sos, t).coeff_monomial(t**2) * t**2
    frozen["unity_sos_value"] = float(sos_trunc.subs(t, 0))
    frozen["unity_sos_slope"] = float(sp.diff(sos_trunc, t).subs(t, 0))

    # transport of P(x)=x from basepoint 0 to basepoint 1
    frozen["transport_x_at_1"] = jet_of_expr(x, [x], [1], 1)

    # Taylor-incompatibility seminorm of {P^0 = 0, P^1 = 1} at m=2:
    # max over ordered pairs (p,q) and |a| <= 1 of |d^a(P^p - P^q)(p)| / |p-q|^(2-|a|)
    vals = []
    polys = {0: sp.Integer(0), 1: sp.Integer(1)}
    for p in (0, 1):
        for q in (0, 1):
            if p == q:
                continue
            diff = polys[p] - polys[q]
            for a in (0, 1):
                d = sp.diff(diff, x, a) if a else diff
                vals.append(abs(float(d.subs(x, p))) / abs(p - q) ** (2 - a))
    frozen["seminorm_two_points"] = max(vals)

    # finite-difference target: a degree-2 polynomial, derivatives at (0.3, -0.2)
    P = 1 + 2 * x - y + sp.Rational(1, 2) * x**2 + x * y
    frozen["fd_poly_derivs"] = jet_of_expr(
        P, [x, y], [sp.Rational(3, 10), sp.Rational(-1, 5)], 2
    )
    return frozen


def oracle_polytope():
    frozen = {}
    # Hand Fourier-Motzkin: {x+y<=1, x-y<=1, -x<=0}, eliminate y.
    # y-rows: (x+y<=1) gives y <= 1-x ; (x-y<=1) gives y >= x-1.
    # combine: x-1 <= 1-x  ->  x <= 1 ; carried row: -x <= 0.
    frozen["fm_project_interval"] = [0.0, 1.0]

    # Chebyshev center of {u>=0, v>=0, u+v<=1}: the incircle of the right
    # triangle with legs 1: r = (a + b - c)/2 with c = sqrt(2), center (r, r).
    r = (2 - math.sqrt(2)) / 2
    frozen["cheb_simplex"] = [1 - 1 / math.sqrt(2), 1 - 1 / math.sqrt(2)]
    assert abs(frozen["cheb_simplex"][0] - r) < 1e-15

    # intervals [0,2],[1,3],[2,4]: pairwise intersections nonempty, full = {2}
    ints = [(0, 2), (1, 3), (2, 4)]
    lo = max(a for a, _ in ints)
    hi = min(b for _, b in ints)
    assert lo <= hi
    frozen["helly_intervals_point"] = float(lo)
    return frozen


def oracle_shape():
    frozen = {}
    y = sp.symbols("y")

    # first refinement, m=1, E={0,1}, f=(0.4,0.45), M=0.5:
    # Gamma_1(0, 0.5) = {v : v = 0.4, |v| <= 0.5, exists w = 0.45, |w| <= 0.5,
    #                     |v - w| <= 0.5 * 1}
    v, w, M = Fraction(2, 5), Fraction(9, 20), Fraction(1, 2)
    ok = abs(v) <= M and abs(w) <= M and abs(v - w) <= M
    assert ok
    frozen["refine_m1_interval"] = [float(v), float(v)]
    # f=(0,10), M=1: the far point's box |10| <= 1 already fails
    frozen["refine_m1_empty"] = not (abs(Fraction(10)) <= 1)

    # closed-form membership for a + b y with penalty y^2 (basepoint 0, M=1):
    # member iff |a| <= 1, |b| <= 1 and a >= b^2/4 (minimum of a+by+y^2).
    samples = []
    grid = [Fraction(k, 8) for k in range(-10, 11, 2)]
    for a in grid:
        for b in grid:
            q = a + b * y + y**2
            mn = sp.minimum(q, y, sp.Interval(-sp.oo, sp.oo))
            member = bool(abs(a) <= 1 and abs(b) <= 1 and mn >= 0)
            closed = bool(abs(a) <= 1 and abs(b) <= 1 and a - b * b / 4 >= 0)
            assert member == closed
            samples.append([float(a), float(b), member])
    frozen["nonneg_ab_samples"] = samples

    # P = 0.25 + y: min of 0.25 + y + y^2 is 0 at y = -1/2 -> boundary member
    q = sp.Rational(1, 4) + y + y**2
    frozen["nonneg_p025_min"] = float(sp.minimum(q, y, sp.Interval(-sp.oo, sp.oo)))
    # P = 0.2 + y: min is -0.05 -> not a member
    q2 = sp.Rational(1, 5) + y + y**2
    frozen["nonneg_p020_min"] = float(sp.minimum(q2, y, sp.Interval(-sp.oo, sp.oo)))

    # dyadic correction sizes for P = 1/4 + y on shrinking balls |y| <= 2^-k:
    # b_k = max(0, -min P) ; P decreasing in -y so min at y = -2^-k.
    bk = []
    for k in range(0, 6):
        mn = sp.minimum(
            sp.Rational(1, 4) + y, y, sp.Interval(-sp.Rational(1, 2**k), sp.Rational(1, 2**k))
        )
        bk.append(float(max(0, -mn)))
    frozen["bk_quarter_plus_y"] = bk
    return frozen


def oracle_basis():
    # scaling grid search: row index of order 0, columns orders 0 and 1,
    # F00 = 1, F01 = 10, target a = 0.1. phi must map to the order-0 index
    # (the only candidate <= it), so the test is 10 * lam <= 0.1 * 1.
    j = 0
    while not (10 * 2.0**-j <= 0.1):
        j += 1
    assert j == 7
    return {"rescale_lambda": 2.0**-j, "rescale_j": j}


def cz_oracle_1d(E, pad=3.0):
    """Standalone maximal-cube recursion, simple stopping rule:
    a cube stops iff its side is <= 1 and its closed 5-dilation holds <= 1
    point of E. Region: bbox(E) padded; roots: level-k0 cubes meeting it."""
    lo = min(E) - pad
    hi = max(E) + pad
    ext = hi - lo
    k0 = 0
    while 2.0**k0 < ext:
        k0 += 1

    def ok(k, i):
        side = 2.0**k
        c = side * i + side / 2
        count = sum(1 for e in E if c - 2.5 * side <= e <= c + 2.5 * side)
        return side <= 1.0 and count <= 1

    roots = []
    i = math.floor(lo / 2.0**k0)
    while 2.0**k0 * i < hi:
        roots.append((k0, i))
        i += 1

    leaves = []

    def rec(k, i):
        if ok(k, i):
            leaves.append((k, i))
            return
        rec(k - 1, 2 * i)
        rec(k - 1, 2 * i + 1)

    for k, i in roots:
        rec(k, i)
    return {
        "region": [lo, hi],
        "roots": [[k, i] for k, i in roots],
        "leaves": sorted([[k, i] for k, i in leaves], key=lambda t: (t[0], t[1])),
    }


def oracle_selection():
    frozen = {}

    # two-point m=1 instance f=(0,1) at x=(0,1): the LP by hand is
    # M >= |0|, M >= |1|, M >= |0-1|/1  ->  M* = 1.
    frozen["pair_m1_minM"] = 1.0

    # tent instance, m=2, n=1, E=(0,1,2), f=(0,1,0); brute grid over M and
    # the middle slope; end slopes decouple once the middle one is fixed.
    E = [0.0, 1.0, 2.0]
    f = [0.0, 1.0, 0.0]

    def feasible(M):
        def box(lo, hi):
            return (lo, hi) if lo <= hi + 1e-12 else None

        step = 1e-3
        s1 = -M
        while s1 <= M + 1e-12:
            ok1 = abs(s1 - 1) <= M + 1e-12 and abs(s1 + 1) <= M + 1e-12
            if ok1:
                # s0 range: |s0| <= M, |s0 - 1| <= M (pair 1->0), |s0| <= 2M
                # (pair 2->0, |0-0-2 s0| <= 4M), |s0 - s1| <= M
                lo0 = max(-M, 1 - M, -2 * M, s1 - M)
                hi0 = min(M, 1 + M, 2 * M, s1 + M)
                # s2 range mirrored: |s2| <= M, |s2 + 1| <= M, |s2| <= 2M,
                # |s2 - s1| <= M
                lo2 = max(-M, -1 - M, -2 * M, s1 - M)
                hi2 = min(M, -1 + M, 2 * M, s1 + M)
                if box(lo0, hi0) and box(lo2, hi2):
                    # remaining coupling |s0 - s2| <= 2M
                    if lo0 - hi2 <= 2 * M + 1e-12 and lo2 - hi0 <= 2 * M + 1e-12:
                        if max(abs(v) for v in f) <= M + 1e-12:
                            return True
            s1 += step
        return False

    Mg = 0.0
    while not feasible(Mg):
        Mg += 1e-3
    frozen["tent_m2"] = {"E": E, "f": f, "M_star_grid": round(Mg, 6), "resolution": 1e-3}

    # symmetric instance where the 3-subset bound is already tight at m=1:
    # E=(0,1,2,3), f=(0,1,0,1); worst pair slope 1 attained inside every
    # window, so M_3 = M_global = 1 and the ratio is exactly 1.
    def minM_subset_m1(pts, vals):
        best = max(abs(v) for v in vals)
        for i in range(len(pts)):
            for j in range(len(pts)):
                if i != j:
                    best = max(best, abs(vals[i] - vals[j]) / abs(pts[i] - pts[j]))
        return best

    import itertools

    E4 = [0.0, 1.0, 2.0, 3.0]
    f4 = [0.0, 1.0, 0.0, 1.0]
    M3 = max(
        minM_subset_m1([E4[i] for i in S], [f4[i] for i in S])
        for S in itertools.combinations(range(4), 3)
    )
    Mg4 = minM_subset_m1(E4, f4)
    assert M3 == Mg4 == 1.0
    frozen["tight_ratio_instance"] = {"E": E4, "f": f4, "M_k": M3, "M_global": Mg4}

    # singleton-feasible, pair-infeasible at M0 = 0.5: f = (-0.4, 0.4), m=1
    M0 = 0.5
    assert abs(-0.4) <= M0 and abs(0.4) <= M0 and abs(-0.4 - 0.4) > M0 * 1.0
    frozen["gamma_fp_incompat"] = {
        "E": [0.0, 1.0],
        "f": [-0.4, 0.4],
        "M0": M0,
        "levels": [True, False],
    }
    return frozen


def main():
    frozen = {
        "jet": oracle_jets(),
        "polytope": oracle_polytope(),
        "shape": oracle_shape(),
        "basis": oracle_basis(),
        "cz": {"example_1d": cz_oracle_1d([0.1, 0.9])},
        "selection": oracle_selection(),
    }
    out = os.path.join(os.path.dirname(__file__), "frozen.json")
    with open(out, "w") as fh:
        json.dump(frozen, fh, indent=1, sort_keys=True)
    print(f"wrote {out}")
    for section, vals in frozen.items():
        print(f"  [{section}] {len(vals)} entries")


if __name__ == "__main__":
    main()
