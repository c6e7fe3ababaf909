"""Shape fields over a finite set E: per-point convex sets Gamma(x, M) of
jets, nested in the scale M.

Built-in generators cover equality interpolation (pure polytopes), certified
nonnegative interpolation (outer polytope plus a semialgebraic membership
oracle), and custom polytopal fields for crafted test instances.  On top of
the generators: sampled convexity checking through sum-of-squares jet
combinations, the refinement operator (demand a Taylor-compatible partner at
every other point of E), its l-fold iterate, and the bounded-subset sets used
by the finiteness experiments.

Nonnegativity of a univariate polynomial is decided exactly over the
rationals by real-root isolation; the two-variable case falls back to a grid
scan with a Lipschitz slack and is flagged as such in certificates.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field as dc_field
from fractions import Fraction

import numpy as np
import sympy as sp

from .jet_core import (
    GlobalConfig,
    Jet,
    factorial_mi,
    index_of,
    multiindices,
    transport_matrix,
)
from .polytope import (
    TOL_LP,
    GuardExceeded,
    HPolytope,
    box_rows,
    feasible,
    chebyshev_center,
    minimize_linear,
    project,
)

__all__ = [
    "ShapeField",
    "ConvexityParams",
    "make_interp_field",
    "make_nonneg_field",
    "make_custom_field",
    "nonneg_member",
    "nonneg_violation",
    "dyadic_corrections",
    "convexity_check",
    "refine_once",
    "refine",
    "gamma_fp",
    "exists_partner",
    "partner_witness",
    "membership_with_cuts",
    "C_GRID",
    "SUBSET_GUARD_DEFAULT",
    "CUT_ROUNDS_MAX",
    "K_MAX_DEFAULT",
]

C_GRID = tuple(2.0**k for k in range(21))
SUBSET_GUARD_DEFAULT = 6
CUT_ROUNDS_MAX = 50
K_MAX_DEFAULT = 40


@dataclass(frozen=True)
class ConvexityParams:
    """Sum-of-squares combination stability constants: blow-up C_w at scales
    delta <= delta_max."""

    C_w: float
    delta_max: float

    def __post_init__(self):
        if self.C_w <= 0 or self.delta_max <= 0:
            raise ValueError("C_w and delta_max must be positive")


class ShapeField:
    """Convex sets Gamma(x, M) for x in a finite E, nested in M.

    Membership at a point is the conjunction of a parametric outer polytope
    (always present) and an optional certified oracle for the semialgebraic
    part.  Refined fields built in oracle mode replace both with a closure
    over the previous level."""

    def __init__(
        self,
        config: GlobalConfig,
        points,
        kind: str,
        degree: int,
        polys: dict | None = None,
        oracles: dict | None = None,
        member_fn=None,
        level: int = 0,
        meta: dict | None = None,
    ):
        self.config = config
        self.points = tuple(tuple(float(v) for v in p) for p in points)
        if len(set(self.points)) != len(self.points):
            raise ValueError("duplicate points in E")
        self.kind = kind
        self.degree = degree
        self.level = level
        self.polys = polys
        self.oracles = oracles
        self.member_fn = member_fn
        self.meta = dict(meta or {})

    # -- basic geometry -------------------------------------------------------

    @property
    def n(self) -> int:
        return self.config.n

    @property
    def L(self) -> int:
        """Number of jet coefficient slots at this field's degree."""
        return len(multiindices(self.n, self.degree))

    @property
    def is_polytopal(self) -> bool:
        return self.member_fn is None and self.oracles is None and self.polys is not None

    def polytope_at(self, x) -> HPolytope:
        """The (outer, when an oracle exists) polytope of Gamma(x, .)."""
        if self.polys is None:
            raise GuardExceeded(f"field kind {self.kind!r} at level {self.level} is oracle-only")
        return self.polys[tuple(float(v) for v in x)]

    def member(self, x, M: float, P: Jet, tol: float = TOL_LP) -> bool:
        x = tuple(float(v) for v in x)
        if P.degree != self.degree or P.basepoint != x:
            raise ValueError("jet degree/basepoint does not match the field at x")
        if self.member_fn is not None:
            return self.member_fn(x, M, P)
        ok = self.polys[x].member(P.derivs, M, tol)
        if ok and self.oracles is not None:
            ok = bool(self.oracles[x](M, P)[0])
        return ok

    def witness(self, x, M: float) -> Jet | None:
        """Some member of Gamma(x, M), or None when empty.  For oracle-carrying
        fields the LP witness is certified, falling back to cut generation."""
        x = tuple(float(v) for v in x)
        if self.member_fn is not None:
            raise GuardExceeded("oracle-mode refined fields do not expose witnesses")
        if self.oracles is None:
            res = feasible(self.polys[x], M)
            if not res.is_feasible:
                return None
            return Jet(x, self.degree, res.witness)
        res = membership_with_cuts(self.polys[x], self.oracles[x], x, M, self.degree)
        return res

    def empty_at(self, x, M: float) -> bool:
        return self.witness(x, M) is None

    def with_level(self, level: int) -> "ShapeField":
        out = ShapeField(
            self.config,
            self.points,
            self.kind,
            self.degree,
            polys=self.polys,
            oracles=self.oracles,
            member_fn=self.member_fn,
            level=level,
            meta=self.meta,
        )
        return out


# ---------------------------------------------------------------------------
# built-in generators


def _pin_rows(L: int, value_index: int, value: float):
    e = [0.0] * L
    e[value_index] = 1.0
    return [
        (tuple(e), float(value), 0.0),
        (tuple(-v for v in e), -float(value), 0.0),
    ]


def make_interp_field(E, f, m: int, n: int | None = None) -> ShapeField:
    """Equality interpolation sets: Gamma(x, M) = {P : |d^b P(x)| <= M for
    |b| <= m-1, P(x) = f(x)}, a polytope per point."""
    pts = [tuple(float(v) for v in p) for p in E]
    if n is None:
        n = len(pts[0])
    config = GlobalConfig(m, n)
    degree = m - 1
    L = len(multiindices(n, degree))
    zero_slot = index_of(n, degree)[(0,) * n]
    fmap = dict(zip(pts, [float(v) for v in f]))
    polys = {
        x: HPolytope.from_rows(L, box_rows(L) + _pin_rows(L, zero_slot, fmap[x]))
        for x in pts
    }
    return ShapeField(config, pts, "interp", degree, polys=polys, meta={"f": fmap})


def make_nonneg_field(E, f, flavor: str, m: int, n: int | None = None) -> ShapeField:
    """Nonnegative interpolation sets: box and value-pin rows as the outer
    polytope, plus the certified global condition P(y) + M|y-x|^m >= 0.

    flavor "Cm11" keeps degree m-1 jets; flavor "Cm" uses degree-m jets and
    additionally requires the dyadic correction sizes b_k to show decaying
    b_k 2^(mk) over the last computed scales (a truncated stand-in for the
    vanishing-rate condition, flagged heuristic in certificates)."""
    if flavor not in ("Cm", "Cm11"):
        raise ValueError(f"unknown flavor {flavor!r}")
    pts = [tuple(float(v) for v in p) for p in E]
    if n is None:
        n = len(pts[0])
    fvals = [float(v) for v in f]
    if any(v < 0 for v in fvals):
        raise ValueError("nonneg field requires f >= 0")
    config = GlobalConfig(m, n)
    degree = m if flavor == "Cm" else m - 1
    L = len(multiindices(n, degree))
    zero_slot = index_of(n, degree)[(0,) * n]
    fmap = dict(zip(pts, fvals))
    polys = {
        x: HPolytope.from_rows(L, box_rows(L) + _pin_rows(L, zero_slot, fmap[x]))
        for x in pts
    }
    oracles = {
        x: (lambda M, P, _m=m, _fl=flavor: nonneg_member(P, M, _fl, m=_m)) for x in pts
    }
    return ShapeField(
        config,
        pts,
        "nonneg",
        degree,
        polys=polys,
        oracles=oracles,
        meta={"f": fmap, "flavor": flavor},
    )


def make_custom_field(config: GlobalConfig, polys: dict, degree: int, kind: str = "custom") -> ShapeField:
    """Field from explicit parametric polytopes, one per point."""
    pts = list(polys)
    return ShapeField(config, pts, kind, degree, polys={tuple(map(float, p)): q for p, q in polys.items()})


# ---------------------------------------------------------------------------
# certified nonnegativity (the semialgebraic membership part)


def _poly_on_ray(P: Jet, M, m: int, sign: int):
    """Q(t) = P(x + sign*t*e1) + M t^m on t >= 0 as exact rational
    coefficients (univariate case)."""
    coeffs = {}
    for a, c in zip(P.space, P.derivs):
        k = a[0]
        coeffs[k] = coeffs.get(k, Fraction(0)) + Fraction(float(c)) / factorial_mi(a) * (sign**k)
    coeffs[m] = coeffs.get(m, Fraction(0)) + Fraction(M)
    deg = max(coeffs)
    return [coeffs.get(k, Fraction(0)) for k in range(deg + 1)]


def _min_nonneg_on_halfline(coeffs) -> bool:
    """Exact decision: sum coeffs[k] t^k >= 0 for all t >= 0.

    With Q(0) >= 0 and positive leading coefficient, Q stays nonnegative iff
    it never changes sign, i.e. every root in (0, inf) has even multiplicity;
    the count of odd-multiplicity roots is a Sturm query on the product of
    odd-exponent squarefree factors."""
    t = sp.Symbol("t")
    expr = sum(sp.Rational(c.numerator, c.denominator) * t**k for k, c in enumerate(coeffs))
    poly = sp.Poly(expr, t)
    if poly.is_zero:
        return True
    if poly.eval(0) < 0 or poly.LC() < 0:
        return False
    odd = sp.Poly(1, t)
    for f, mult in poly.sqf_list()[1]:
        if mult % 2:
            odd = odd * f
    while odd.degree() > 0 and odd.eval(0) == 0:  # the origin itself is allowed
        odd = odd.quo(sp.Poly(t, t))
    return odd.degree() <= 0 or odd.count_roots(0, None) == 0


def _grid_scan_min(P: Jet, M: float, m: int, h: float):
    """Float minimum of Q(y) = P(y) + M|y-x|^m over a radius that provably
    contains the global minimizer, with a Lipschitz slack estimate."""
    x = np.array(P.basepoint)
    size = sum(abs(float(c)) / factorial_mi(a) for a, c in zip(P.space, P.derivs))
    R = max(1.0, (2.0 * size / max(M, 1e-12)) ** (1.0 / max(m - P.degree, 1)) if m > P.degree else 1.0, 2.0 * size / max(M, 1e-12))
    axes = [np.arange(xi - R, xi + R + h, h) for xi in x]
    grids = np.meshgrid(*axes, indexing="ij")
    flat = np.stack([g.ravel() for g in grids], axis=1)
    diffs = flat - x
    vals = np.zeros(len(flat))
    for a, c in zip(P.space, P.derivs):
        term = np.full(len(flat), float(c) / factorial_mi(a))
        for d in range(P.n):
            if a[d]:
                term = term * diffs[:, d] ** a[d]
        vals += term
    vals += M * np.linalg.norm(diffs, axis=1) ** m
    i = int(np.argmin(vals))
    # crude Lipschitz bound on the scan box
    lip = sum(
        abs(float(c)) / factorial_mi(a) * sum(a) * max(1.0, R) ** max(sum(a) - 1, 0)
        for a, c in zip(P.space, P.derivs)
    ) * math.sqrt(P.n) + M * m * max(1.0, R) ** (m - 1) * math.sqrt(P.n)
    return float(vals[i]), tuple(flat[i]), lip, R


def nonneg_member(P: Jet, M: float, flavor: str, m: int | None = None, h_cert: float = 1e-2):
    """Certified decision that Q(y) = P(y) + M|y - x|^m >= 0 for all y.

    n=1: exact over the rationals by real-root isolation on both half-lines.
    n=2: grid scan with Lipschitz slack; borderline cases are decided by the
    grid sign and flagged approximate.  Flavor "Cm" additionally requires the
    dyadic correction sizes to decay (see dyadic_corrections)."""
    if m is None:
        m = P.degree if flavor == "Cm" else P.degree + 1
    if P.n == 1:
        ok = all(
            _min_nonneg_on_halfline(_poly_on_ray(P, M, m, sign)) for sign in (1, -1)
        )
        cert = {"mode": "root-isolation", "exact": True}
    elif P.n == 2:
        val, argmin, lip, R = _grid_scan_min(P, M, m, h_cert)
        slack = lip * h_cert * math.sqrt(2) / 2
        if val - slack >= 0:
            ok, exactish = True, True
        elif val < 0:
            ok, exactish = False, True
        else:
            ok, exactish = val >= 0, False
        cert = {
            "mode": "grid-scan",
            "exact": False,
            "certified_sign": exactish,
            "grid_min": val,
            "argmin": argmin,
            "slack": slack,
            "radius": R,
        }
    else:
        raise GuardExceeded(f"certified nonnegativity supports n <= 2, got n={P.n}")
    if ok and flavor == "Cm":
        bks = dyadic_corrections(P, K_MAX_DEFAULT)
        g = [b * 2.0 ** (m * k) for k, b in enumerate(bks)]
        tail = g[-3:]
        decay_ok = all(v <= 1e-12 for v in tail) or all(
            tail[i + 1] <= tail[i] + 1e-12 for i in range(len(tail) - 1)
        )
        cert["b_k"] = bks
        cert["decay_consistent"] = decay_ok
        cert["decay_heuristic"] = True
        ok = ok and decay_ok
    return ok, cert


def nonneg_violation(P: Jet, M: float, m: int):
    """(y*, Q(y*)) at the float minimizer of Q(y) = P(y) + M|y-x|^m; used to
    generate outer-linearization cuts."""
    if P.n == 1:
        x = P.basepoint[0]
        best_val, best_y = None, None
        for sign in (1, -1):
            coeffs = [float(c) for c in _poly_on_ray(P, M, m, sign)]
            dcoeffs = [k * coeffs[k] for k in range(1, len(coeffs))]
            cands = [0.0]
            if any(abs(c) > 0 for c in dcoeffs):
                roots = np.roots(dcoeffs[::-1])
                cands += [float(r.real) for r in roots if abs(r.imag) < 1e-9 and r.real > 0]
            for t in cands:
                val = sum(c * t**k for k, c in enumerate(coeffs))
                if best_val is None or val < best_val:
                    best_val, best_y = val, (x + sign * t,)
        return best_y, float(best_val)
    val, argmin, _, _ = _grid_scan_min(P, M, m, 1e-2)
    return argmin, val


def dyadic_corrections(P: Jet, k_max: int = K_MAX_DEFAULT):
    """b_k = max(0, -min P over |y - x| <= 2^-k) for k = 0..k_max; the exact
    zero/nonzero decision is by root isolation when n=1."""
    out = []
    if P.n == 1:
        t = sp.Symbol("t")
        expr = sum(
            sp.Rational(Fraction(float(c)).numerator, Fraction(float(c)).denominator)
            / factorial_mi(a)
            * t ** a[0]
            for a, c in zip(P.space, P.derivs)
        )
        poly = sp.Poly(expr, t) if expr != 0 else sp.Poly(0, t)
        dpoly = poly.diff(t)
        for k in range(k_max + 1):
            r = Fraction(1, 2**k)
            lo, hi = sp.Rational(-r.denominator and -r.numerator, r.denominator), sp.Rational(r.numerator, r.denominator)
            cands = [lo, hi]
            if not dpoly.is_zero:
                for root in sp.Poly(dpoly, t).real_roots():
                    if lo <= root <= hi:
                        cands.append(root)
            mn = min(poly.eval(c) if poly.degree() >= 0 else sp.Integer(0) for c in cands)
            out.append(float(max(0, -mn)))
    else:
        for k in range(k_max + 1):
            r = 2.0**-k
            h = r / 16.0
            x = np.array(P.basepoint)
            axes = [np.arange(xi - r, xi + r + h, h) for xi in x]
            grids = np.meshgrid(*axes, indexing="ij")
            flat = np.stack([g.ravel() for g in grids], axis=1)
            keep = np.linalg.norm(flat - x, axis=1) <= r
            flat = flat[keep]
            vals = np.array([P.evaluate(p) for p in flat])
            out.append(float(max(0.0, -vals.min())))
    return out


# ---------------------------------------------------------------------------
# LP membership with certify-and-cut for oracle-carrying fields


def _cut_row(P: Jet, ystar, m: int, L: int, space, x):
    """Outer-linearization row: P(y*) + M |y* - x|^m >= 0 is affine in the
    coefficient vector and in M; returned in (a, b0, b1) form."""
    a = [0.0] * L
    dx = np.array(ystar) - np.array(x)
    for i, alpha in enumerate(space):
        w = 1.0 / factorial_mi(alpha)
        for d, p in zip(dx, alpha):
            if p:
                w *= d**p
        a[i] = -w  # -P(y*) <= M |y*-x|^m
    b1 = float(np.linalg.norm(dx) ** m)
    return (tuple(a), 0.0, b1)


def membership_with_cuts(
    poly: HPolytope,
    oracle,
    x,
    M: float,
    degree: int,
    objective=None,
    max_rounds: int = CUT_ROUNDS_MAX,
):
    """Find a certified member of {outer polytope} intersect {oracle true} at
    scale M, adding tangent cuts at violating minimizers; None when the LP
    becomes infeasible.  Best-effort: rounds are capped and exhaustion returns
    None with no certificate claim."""
    n = len(x)
    space = multiindices(n, degree)
    current = poly
    for _ in range(max_rounds):
        res = feasible(current, M)
        if not res.is_feasible:
            return None
        P = Jet(tuple(x), degree, res.witness)
        ok, cert = oracle(M, P)
        if ok:
            return P
        ystar = cert.get("argmin")
        if ystar is None:
            ystar, _ = nonneg_violation(P, M, degree + 1 if len(cert.get("b_k", [])) == 0 else degree)
        current = HPolytope.from_rows(
            current.dim, list(current.rows) + [_cut_row(P, ystar, _penalty_order(cert, degree), current.dim, space, x)]
        )
    return None


def _penalty_order(cert, degree):
    # Cm certificates carry b_k tables; their penalty exponent is the degree
    return degree if cert.get("b_k") is not None else degree + 1


# ---------------------------------------------------------------------------
# convexity checking


def _sample_member(field: ShapeField, x, M: float, rng) -> Jet | None:
    """A member of Gamma(x, M): Chebyshev center of the outer polytope pushed
    by random convex combinations of LP-optimal vertices, shrunk toward a safe
    anchor until any oracle accepts."""
    poly = field.polytope_at(x)
    try:
        center = chebyshev_center(poly, M)
    except Exception:
        return None
    L = field.L
    verts = []
    for _ in range(3):
        d = rng.standard_normal(L)
        try:
            _, v = minimize_linear(poly, -d, M)
            verts.append(v)
        except Exception:
            pass
    point = np.array(center)
    if verts:
        w = rng.random(len(verts))
        w = w / (w.sum() + 1.0)  # leave weight on the center
        point = (1.0 - w.sum()) * point + sum(wi * np.asarray(v) for wi, v in zip(w, verts))
    zero_slot = index_of(field.n, field.degree)[(0,) * field.n]
    if x in field.meta.get("f", {}):
        point[zero_slot] = field.meta["f"][x]  # exact pin; LP output only holds to ~1e-9
    if field.oracles is None:
        return Jet(x, field.degree, point)
    # anchor: value pin with all other slots zero is always certified for
    # nonneg fields (f(x) + M|y-x|^m >= 0)
    anchor = np.zeros(L)
    anchor[zero_slot] = field.meta.get("f", {}).get(x, 0.0)
    for _ in range(30):
        P = Jet(x, field.degree, point)
        if field.member(x, M, P):
            return P
        point = 0.5 * (point + anchor)
    P = Jet(x, field.degree, anchor)
    return P if field.member(x, M, P) else None


def convexity_check(
    field: ShapeField,
    params: ConvexityParams,
    trials: int = 50,
    seed: int = 0,
) -> dict:
    """Sampled stability of Gamma under Q1.Q1.P1 + Q2.Q2.P2 combinations.

    Per trial: members P1, P2 of Gamma(x, M) with the scaled difference bound
    |d^b (P1-P2)(x)| <= M delta^(m-|b|), a unity pair Q1, Q2 whose derivatives
    obey |d^b Qi(x)| <= delta^(-|b|), and the smallest C on C_GRID with the
    combination in Gamma(x, C M).  Reports pass count and the empirical C_w."""
    rng = np.random.default_rng(seed)
    m = field.config.m
    space = multiindices(field.n, field.degree)
    passed = skipped = 0
    worst_C = 1.0
    details = []
    for _ in range(trials):
        x = field.points[rng.integers(len(field.points))]
        M = float(2.0 ** rng.uniform(-1, 2))
        delta = float(params.delta_max * rng.uniform(0.2, 1.0))
        P1 = _sample_member(field, x, M, rng)
        if P1 is None:
            skipped += 1
            continue
        # difference within the scaled box, shrunk until membership holds;
        # pinned fields keep the value slot untouched
        diff = np.array(
            [M * delta ** (m - sum(a)) * rng.uniform(-1, 1) for a in space]
        )
        if x in field.meta.get("f", {}):
            diff[index_of(field.n, field.degree)[(0,) * field.n]] = 0.0
        P2 = None
        for _ in range(30):
            cand = Jet(x, field.degree, P1.derivs + diff)
            if field.member(x, M, cand):
                P2 = cand
                break
            diff *= 0.5
        if P2 is None:
            skipped += 1
            continue
        # unity pair from a jet scaled like delta^(-|b|), c0 backtracked from
        # 1/4 until the square-root domain and the size bounds hold
        S = Jet(
            x,
            field.degree,
            np.array([delta ** (-sum(a)) * rng.uniform(-1, 1) for a in space]),
        )
        c0 = 0.25
        Q1 = Q2 = None
        from .jet_core import jet_multiply, unity_pair_from_S

        for _ in range(20):
            try:
                q1, q2 = unity_pair_from_S(S * c0, 1.0)
            except Exception:
                c0 *= 0.5
                continue
            bound_ok = all(
                abs(q.deriv(a)) <= delta ** (-sum(a)) + 1e-12
                for q in (q1, q2)
                for a in space
            )
            if bound_ok:
                Q1, Q2 = q1, q2
                break
            c0 *= 0.5
        if Q1 is None:
            skipped += 1
            continue
        comb = jet_multiply(jet_multiply(Q1, Q1), P1) + jet_multiply(
            jet_multiply(Q2, Q2), P2
        )
        found = None
        for C in C_GRID:
            if field.member(x, C * M, comb, tol=1e-7):
                found = C
                break
        if found is None:
            details.append({"x": x, "M": M, "delta": delta, "C": None})
            continue
        passed += 1
        worst_C = max(worst_C, found)
        details.append({"x": x, "M": M, "delta": delta, "C": found})
    return {
        "trials": trials,
        "passed": passed,
        "skipped": skipped,
        "failed": trials - passed - skipped,
        "empirical_C_w": worst_C,
        "within_params": worst_C <= params.C_w,
        "details": details,
    }


# ---------------------------------------------------------------------------
# refinement


def _compat_rows_joint(n, degree, m, x, y, L):
    """Rows over (c, c') in R^(2L): |c_b - (transport c' to x)_b| <= M |x-y|^(m-|b|)."""
    T = transport_matrix(n, degree, y, x)
    r = float(np.linalg.norm(np.array(x) - np.array(y)))
    rows = []
    space = multiindices(n, degree)
    for i, b in enumerate(space):
        a = np.zeros(2 * L)
        a[i] = 1.0
        a[L:] = -T[i]
        w = r ** (m - sum(b))
        rows.append((tuple(a), 0.0, w))
        rows.append((tuple(-a), 0.0, w))
    return rows


def _lift_rows(rows, L, offset):
    """Reinterpret rows over c' living at coordinate offset in a 2L space."""
    out = []
    for a, b0, b1 in rows:
        v = [0.0] * (2 * L)
        for i, ai in enumerate(a):
            v[offset + i] = float(ai)
        out.append((tuple(v), b0, b1))
    return out


def refine_once(field: ShapeField, mode: str = "explicit") -> ShapeField:
    """One refinement: Gamma'(x, M) keeps the jets P for which every y in E
    admits a partner P' in Gamma(y, M) with |d^b (P-P')(x)| <= M|x-y|^(m-|b|).

    Explicit mode eliminates the partner coordinates by projection and yields
    polytopes again (valid for every M at once); oracle mode closes over the
    previous level and answers membership with one feasibility solve per y."""
    m = field.config.m
    n, L = field.n, field.L
    if mode == "explicit":
        if field.polys is None or field.member_fn is not None:
            raise GuardExceeded("explicit refinement needs a polytopal field")
        if field.oracles is not None:
            raise GuardExceeded(
                "explicit refinement of oracle-carrying fields is not exact; use oracle mode"
            )
        new_polys = {}
        for x in field.points:
            rows = list(field.polys[x].rows)  # the y = x partner forces P itself in
            for y in field.points:
                if y == x:
                    continue
                joint = HPolytope.from_rows(
                    2 * L,
                    _lift_rows(field.polys[y].rows, L, L)
                    + _compat_rows_joint(n, field.degree, m, x, y, L),
                )
                projected = project(joint, range(L))
                rows.extend(projected.rows)
            new_polys[x] = HPolytope.from_rows(L, rows)
        return ShapeField(
            field.config,
            field.points,
            field.kind,
            field.degree,
            polys=new_polys,
            level=field.level + 1,
            meta=field.meta,
        )
    if mode != "oracle":
        raise ValueError(f"unknown mode {mode!r}")
    prev = field

    def member_fn(x, M, P):
        return all(exists_partner(prev, y, M, x, P) for y in prev.points)

    return ShapeField(
        field.config,
        field.points,
        field.kind,
        field.degree,
        member_fn=member_fn,
        level=field.level + 1,
        meta=field.meta,
    )


def partner_witness(field: ShapeField, y, M: float, x, P: Jet, tol: float = TOL_LP):
    """A partner P' in Gamma(y, M) with |d^b (P-P')(x)| <= M |x-y|^(m-|b|),
    based at y, or None.  Polytopal fields: one LP.  Oracle-carrying fields:
    LP with certify-and-cut."""
    y = tuple(float(v) for v in y)
    x = tuple(float(v) for v in x)
    if y == x:
        return P if field.member(x, M, P, tol) else None
    if field.member_fn is not None:
        raise GuardExceeded("cannot search partners inside an oracle-mode refined field")
    n, L, m = field.n, field.L, field.config.m
    T = transport_matrix(n, field.degree, y, x)
    r = float(np.linalg.norm(np.array(x) - np.array(y)))
    rows = list(field.polys[y].rows)
    space = multiindices(n, field.degree)
    for i, b in enumerate(space):
        w = r ** (m - sum(b))
        #  P_b - (T c')_b <= M w   and   (T c')_b - P_b <= M w
        rows.append((tuple(-T[i]), -float(P.derivs[i]), w))
        rows.append((tuple(T[i]), float(P.derivs[i]), w))
    poly = HPolytope.from_rows(L, rows)
    if field.oracles is None:
        res = feasible(poly, M)
        return Jet(y, field.degree, res.witness) if res.is_feasible else None
    return membership_with_cuts(poly, field.oracles[y], y, M, field.degree)


def exists_partner(field: ShapeField, y, M: float, x, P: Jet, tol: float = TOL_LP) -> bool:
    """Feasibility form of partner_witness."""
    return partner_witness(field, y, M, x, P, tol) is not None


def refine(field: ShapeField, l: int, mode: str = "explicit", keep_all: bool = False):
    """l-fold refinement; keep_all returns the whole cascade [Gamma_0..Gamma_l]."""
    levels = [field]
    for _ in range(l):
        levels.append(refine_once(levels[-1], mode))
    return levels if keep_all else levels[-1]


# ---------------------------------------------------------------------------
# bounded-subset sets for the finiteness experiments


def whitney_pair_rows(points, degree, m, n, fixed: dict | None = None):
    """Seminorm rows |d^a (P^p - P^q)(p)| <= M |p-q|^(m-|a|) over the stacked
    coefficient vector of jets at the given points; `fixed` pins some jets to
    constants and removes their coordinates."""
    pts = [tuple(float(v) for v in p) for p in points]
    fixed = {tuple(float(v) for v in k): v2 for k, v2 in (fixed or {}).items()}
    free = [p for p in pts if p not in fixed]
    L = len(multiindices(n, degree))
    idx = {p: i for i, p in enumerate(free)}
    dim = L * len(free)
    rows = []
    space = multiindices(n, degree)
    for p in pts:
        for q in pts:
            if p == q:
                continue
            T = transport_matrix(n, degree, q, p)
            r = float(np.linalg.norm(np.array(p) - np.array(q)))
            for i, a in enumerate(space):
                vec = np.zeros(dim)
                const = 0.0
                if p in fixed:
                    const += float(fixed[p].derivs[i])
                else:
                    vec[idx[p] * L + i] += 1.0
                if q in fixed:
                    const -= float(T[i] @ fixed[q].derivs)
                else:
                    vec[idx[q] * L : (idx[q] + 1) * L] -= T[i]
                w = r ** (m - sum(a))
                rows.append((tuple(vec), -const, w))
                rows.append((tuple(-vec), const, w))
    return rows, free, dim


def gamma_fp(
    field0: ShapeField,
    x,
    M0: float,
    l: int,
    P: Jet,
    subset_cap: int | None = None,
    exact: bool = False,
) -> bool:
    """P lies in the level-l bounded-subset set at (x, M0): for every S in E
    with #S <= (L+2)^l, the Whitney-field system over S + {x} (P pinned at x,
    pairwise seminorm bounds, per-point membership) is feasible.  Checking the
    maximal subset size suffices because subsystems of feasible systems stay
    feasible."""
    if field0.member_fn is not None:
        raise GuardExceeded("bounded-subset sets are built from a base field, not a refined closure")
    x = tuple(float(v) for v in x)
    L = field0.L
    budget = (L + 2) ** l
    guard = subset_cap if subset_cap is not None else SUBSET_GUARD_DEFAULT
    if budget > guard and subset_cap is None:
        raise GuardExceeded(
            f"subset budget (L+2)^l = {budget} exceeds guard {guard}; pass subset_cap to override"
        )
    k_eff = min(budget, guard, len(field0.points))
    if l == 0 or k_eff == 0:
        return field0.member(x, M0, P)
    if not field0.member(x, M0, P):
        return False
    if field0.oracles is not None and exact:
        raise GuardExceeded("exact subset systems need a polytopal field")
    for S in itertools.combinations(sorted(field0.points), k_eff):
        pts = sorted(set(S) | {x})
        rows, free, dim = whitney_pair_rows(
            pts, field0.degree, field0.config.m, field0.n, fixed={x: P}
        )
        if not free:
            continue
        Lc = field0.L
        idx = {p: i for i, p in enumerate(free)}
        for p in free:
            base = field0.polys[p].rows if field0.polys is not None else ()
            for a, b0, b1 in base:
                v = [0.0] * dim
                for i, ai in enumerate(a):
                    v[idx[p] * Lc + i] = float(ai)
                rows.append((tuple(v), b0, b1))
        system = HPolytope.from_rows(dim, rows)
        if field0.oracles is None:
            if not feasible(system, M0, exact=exact).is_feasible:
                return False
        else:
            if _feasible_with_oracle_jets(system, field0, free, M0) is None:
                return False
    return True


def _feasible_with_oracle_jets(system: HPolytope, field: ShapeField, free, M0):
    """Certify-and-cut over a stacked system whose blocks must each pass the
    per-point oracle."""
    L = field.L
    current = system
    for _ in range(CUT_ROUNDS_MAX):
        res = feasible(current, M0)
        if not res.is_feasible:
            return None
        bad = None
        for i, p in enumerate(free):
            jet = Jet(p, field.degree, res.witness[i * L : (i + 1) * L])
            ok, cert = field.oracles[p](M0, jet)
            if not ok:
                bad = (i, p, jet, cert)
                break
        if bad is None:
            return res.witness
        i, p, jet, cert = bad
        ystar = cert.get("argmin")
        if ystar is None:
            ystar, _ = nonneg_violation(jet, M0, _penalty_order(cert, field.degree))
        a_local, b0, b1 = _cut_row(
            jet, ystar, _penalty_order(cert, field.degree), L, jet.space, p
        )
        v = [0.0] * current.dim
        for j, aj in enumerate(a_local):
            v[i * L + j] = aj
        current = HPolytope.from_rows(current.dim, list(current.rows) + [(tuple(v), b0, b1)])
    return None
