"""Dyadic cubes, stopping-time decompositions under pluggable OK predicates,
C^m partitions of unity, and Whitney-style gluing of local data into a global
function, including the nonnegativity-preserving variant.

Everything evaluable here exposes jets: a partition bump, a cutoff, a glued
function all answer jet_at(x, degree) with exact truncated-Leibniz
arithmetic, so gluing reproduces shared jets at data points to float
precision rather than finite-difference precision.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .jet_core import (
    AnalyticSeries,
    INV_SQRT,
    IndexSet,
    Jet,
    RECIPROCAL,
    WhitneyField,
    index_of,
    jet_analytic_compose,
    jet_multiply,
    multiindices,
    power_series,
    set_compare,
    taylor_transport,
    transport_matrix,
    whitney_seminorm,
)
from .polytope import GuardExceeded, HPolytope, feasible
from .shape_field import ShapeField, dyadic_corrections, nonneg_member

__all__ = [
    "DyadicCube",
    "CZTree",
    "PartitionOfUnity",
    "GluedFunction",
    "ExtensionFunction",
    "NonnegWitness",
    "Profile1D",
    "cz_decompose",
    "ok_simple",
    "ok_predicate_basis",
    "build_pou",
    "glue",
    "whitney_extend",
    "nonneg_witness",
    "region_for",
    "export_grid_csv",
    "smoothstep_coeffs",
    "plateau_profile",
    "falling_profile",
    "annulus_profile",
    "DEPTH_GUARD",
    "DILATION",
]

DEPTH_GUARD = 40
SUBSET_ENUM_GUARD = 4096
DILATION = Fraction(65, 64)


# ---------------------------------------------------------------------------
# dyadic cubes


@dataclass(frozen=True)
class DyadicCube:
    """The half-open cube prod_v [2^level i_v, 2^level (i_v + 1))."""

    level: int
    corner: tuple

    def __post_init__(self):
        object.__setattr__(self, "corner", tuple(int(v) for v in self.corner))

    @property
    def n(self) -> int:
        return len(self.corner)

    @property
    def side(self) -> float:
        return 2.0**self.level

    @property
    def lo(self) -> tuple:
        return tuple(self.side * i for i in self.corner)

    @property
    def hi(self) -> tuple:
        return tuple(self.side * (i + 1) for i in self.corner)

    @property
    def center(self) -> tuple:
        return tuple(self.side * (i + 0.5) for i in self.corner)

    def parent(self) -> "DyadicCube":
        # floor division keeps the lattice consistent for negative corners
        return DyadicCube(self.level + 1, tuple(i // 2 for i in self.corner))

    def children(self) -> tuple:
        return tuple(
            DyadicCube(self.level - 1, tuple(2 * i + o for i, o in zip(self.corner, off)))
            for off in itertools.product((0, 1), repeat=self.n)
        )

    def dilate(self, factor) -> tuple:
        """Closed box (lo, hi) with the same center and side factor * side."""
        half = float(factor) * self.side / 2.0
        c = self.center
        return tuple(v - half for v in c), tuple(v + half for v in c)

    def contains(self, x) -> bool:
        return all(l <= v < h for l, v, h in zip(self.lo, x, self.hi))


def _box_contains(box, x) -> bool:
    lo, hi = box
    return all(l <= v <= h for l, v, h in zip(lo, x, hi))


def _box_subset(inner, outer) -> bool:
    return all(ol <= il for ol, il in zip(outer[0], inner[0])) and all(
        ih <= oh for ih, oh in zip(inner[1], outer[1])
    )


def _boxes_intersect(a, b) -> bool:
    return all(al <= bh and bl <= ah for al, ah, bl, bh in zip(a[0], a[1], b[0], b[1]))


def region_for(E, pad: float = 3.0) -> tuple:
    """Axis box: bounding box of E inflated by pad on every side."""
    pts = [tuple(float(v) for v in x) for x in E]
    if not pts:
        raise ValueError("empty point set; pass an explicit region instead")
    n = len(pts[0])
    lo = tuple(min(p[v] for p in pts) - pad for v in range(n))
    hi = tuple(max(p[v] for p in pts) + pad for v in range(n))
    return lo, hi


# ---------------------------------------------------------------------------
# decomposition


@dataclass
class CZTree:
    region: tuple
    roots: tuple
    leaves: tuple
    tags: dict = dc_field(default_factory=dict)
    witness: dict = dc_field(default_factory=dict)
    payloads: dict = dc_field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.region[0])

    def classify(self, E, scale_cap: float = 1.0):
        """Assign Type 1 (one data point in 5Q), Type 2 (none, but the parent
        still fits under the scale cap), or Type 3 (none, at top scale), and
        pick the witness point for Types 1 and 2."""
        pts = [tuple(float(v) for v in x) for x in E]
        for Q in self.leaves:
            near = [p for p in pts if _box_contains(Q.dilate(5), p)]
            if near:
                if len(near) > 1:
                    raise ValueError(f"leaf {Q} sees {len(near)} data points; not a stopping leaf")
                self.tags[Q] = 1
                self.witness[Q] = near[0]
            elif Q.side * 2 <= scale_cap:
                up = [p for p in pts if _box_contains(Q.parent().dilate(5), p)]
                if not up:
                    raise ValueError(f"leaf {Q} is maximal yet its parent sees no data")
                c = Q.center
                # nearest-to-center, coordinates as tie break: deterministic
                self.tags[Q] = 2
                self.witness[Q] = min(
                    up, key=lambda p: (sum((a - b) ** 2 for a, b in zip(p, c)), p)
                )
            else:
                self.tags[Q] = 3
        return self


def _root_cover(region, k_top):
    lo, hi = region
    side = 2.0**k_top
    ranges = []
    for l, h in zip(lo, hi):
        i = math.floor(l / side)
        idx = []
        while side * i < h:
            idx.append(i)
            i += 1
        ranges.append(idx)
    return tuple(DyadicCube(k_top, c) for c in itertools.product(*ranges))


def cz_decompose(region, ok, max_depth: int = DEPTH_GUARD, check_monotone: bool = True) -> CZTree:
    """Maximal-OK-cube partition of a dyadic cover of the region.

    The cover consists of dyadic cubes at the smallest level whose side
    reaches the region extent.  OK cubes of the cover stay whole; the rest
    split recursively, keeping every child on which ok first holds.  For a
    downward-monotone ok these leaves are exactly the OK cubes that are
    maximal within the cover.  Partition and good-geometry invariants are
    verified before returning."""
    lo = tuple(float(v) for v in region[0])
    hi = tuple(float(v) for v in region[1])
    ext = max(h - l for l, h in zip(lo, hi))
    if ext <= 0:
        raise ValueError("empty region")
    k_top = 0
    while 2.0**k_top < ext:
        k_top += 1
    roots = _root_cover((lo, hi), k_top)

    leaves = []
    floor_level = k_top - max_depth
    stack = []
    for Q in roots:
        if ok(Q):
            leaves.append(Q)
        else:
            stack.append(Q)
    while stack:
        Q = stack.pop()
        for child in Q.children():
            if ok(child):
                leaves.append(child)
            elif child.level <= floor_level:
                raise GuardExceeded(f"recursion descended {max_depth} levels without stopping")
            else:
                stack.append(child)
    leaves.sort(key=lambda Q: (Q.level, Q.corner))

    if check_monotone:
        step = max(1, len(leaves) // 16)
        for Q in leaves[::step]:
            for child in Q.children():
                if not ok(child):
                    raise ValueError(
                        f"predicate is not monotone: {Q} is OK but its child {child} is not"
                    )

    vol = sum(Q.side**Q.n for Q in leaves)
    want = sum(Q.side**Q.n for Q in roots)
    if abs(vol - want) > 1e-9 * max(1.0, want):
        raise AssertionError(f"leaf volumes {vol} do not tile the cover volume {want}")
    _verify_good_geometry(leaves)
    return CZTree((lo, hi), roots, tuple(leaves))


def _verify_good_geometry(leaves):
    boxes = [Q.dilate(DILATION) for Q in leaves]
    for i, Q in enumerate(leaves):
        for j in range(i + 1, len(leaves)):
            if abs(Q.level - leaves[j].level) <= 1:
                continue
            if _boxes_intersect(boxes[i], boxes[j]):
                raise AssertionError(
                    f"good geometry fails: {Q} and {leaves[j]} touch with sidelength "
                    f"ratio 2^{abs(Q.level - leaves[j].level)}"
                )


def ok_simple(E, scale_cap: float = 1.0):
    """Q is OK when its side is at most scale_cap and the closed 5-dilation
    holds at most one data point."""
    pts = [tuple(float(v) for v in x) for x in E]

    def ok(Q: DyadicCube) -> bool:
        if Q.side > scale_cap:
            return False
        box = Q.dilate(5)
        return sum(1 for p in pts if _box_contains(box, p)) <= 1

    ok.cache = None
    return ok


def _up_closure(A: IndexSet):
    out = []
    for g in multiindices(A.n, A.m - 1):
        if any(all(gi >= bi for gi, bi in zip(g, b)) for b in A.members):
            out.append(g)
    return tuple(out)


def _all_subsets(m, n):
    space = multiindices(n, m - 1)
    if 2 ** len(space) > SUBSET_ENUM_GUARD:
        raise GuardExceeded(f"2^{len(space)} candidate index sets exceed the enumeration guard")
    return [
        IndexSet.of(m, n, [a for i, a in enumerate(space) if mask >> i & 1])
        for mask in range(2 ** len(space))
    ]


def ok_predicate_basis(field: ShapeField, E, params: dict):
    """OK test in terms of weak bases over a refined field: 5Q must sit
    inside 5Q0, and either at most one data point lies in 5Q or some index
    set strictly below A_set admits, for every data point y in 5Q, a jet
    carrying a weak basis at (y, M0) over the field, boxed against P0 at x0
    and pinned to it on the up-closure of A_set.  Joint feasibility of the
    jet plus its basis vectors is one LP per (y, candidate); exact for
    polytopal fields, outer-approximate otherwise (flagged in the cache)."""
    eps = float(params["eps"])
    A_const = float(params["A"])
    M0 = float(params["M0"])
    P0: Jet = params["P0"]
    x0 = tuple(float(v) for v in params["x0"])
    Q0: DyadicCube = params["Q0"]
    A_set: IndexSet = params["A_set"]
    if eps <= 0 or A_const <= 0 or M0 <= 0:
        raise ValueError("eps, A, M0 must be positive")

    m, n = A_set.m, A_set.n
    cands = [S for S in _all_subsets(m, n) if set_compare(S, A_set) < 0]
    cands.sort(key=lambda S: (len(S), sorted(S.members)))
    pts = [tuple(float(v) for v in x) for x in E]
    box0 = Q0.dilate(5)
    up_A = _up_closure(A_set)
    delta_b = Q0.side / eps
    cache: dict = {}

    def ok(Q: DyadicCube) -> bool:
        if Q in cache:
            return cache[Q]["ok"]
        detail = {"outer_only": not field.is_polytopal}
        if not _box_subset(Q.dilate(5), box0):
            detail.update(ok=False, reason="escapes the base window")
            cache[Q] = detail
            return False
        near = [p for p in pts if _box_contains(Q.dilate(5), p)]
        detail["count"] = len(near)
        if len(near) <= 1:
            detail.update(ok=True, reason="at most one data point")
            cache[Q] = detail
            return True
        dprime = Q.side / eps
        for Ahat in cands:
            if all(
                _weak_basis_feasible(field, y, Ahat, dprime, A_const, M0, P0, x0, delta_b, up_A)
                for y in near
            ):
                detail.update(ok=True, A_hat=[list(a) for a in sorted(Ahat.members)])
                cache[Q] = detail
                return True
        detail.update(ok=False, reason="no candidate index set certifies")
        cache[Q] = detail
        return False

    ok.cache = cache
    return ok


def _weak_basis_feasible(field, y, Ahat, dprime, A_const, M0, P0, x0, delta_b, up_A):
    """One LP: variables are the jet c at y plus one vector per member of
    Ahat; constraints are membership of c and of the two-sided
    perturbations, Kronecker pins, the weak size bounds, the box against P0
    at x0, and the equality pins on the up-closure."""
    m, n = field.config.m, field.n
    space = multiindices(n, m - 1)
    L = len(space)
    pos = index_of(n, m - 1)
    members = sorted(Ahat.members)
    dim = L * (1 + len(members))
    A_gam, b_gam = field.polytope_at(tuple(y)).instantiate(A_const * M0)
    rows = []

    def pad(block, a):
        full = [0.0] * dim
        full[block * L : (block + 1) * L] = [float(v) for v in a]
        return full

    for a, b in zip(A_gam, b_gam):
        rows.append((tuple(pad(0, a)), float(b), 0.0))
    for j, al in enumerate(members):
        coeff = M0 * dprime ** (m - sum(al)) / A_const
        for a, b in zip(A_gam, b_gam):
            for s in (coeff, -coeff):
                full = pad(0, a)
                for i, v in enumerate(a):
                    full[(1 + j) * L + i] = s * float(v)
                rows.append((tuple(full), float(b), 0.0))
        for b_idx in space:
            unit = [0.0] * dim
            unit[(1 + j) * L + pos[b_idx]] = 1.0
            if b_idx in Ahat:
                want = 1.0 if b_idx == al else 0.0
                rows.append((tuple(unit), want, 0.0))
                rows.append((tuple(-v for v in unit), -want, 0.0))
            elif all(bi >= ai for bi, ai in zip(b_idx, al)):
                bound = A_const * dprime ** (sum(al) - sum(b_idx))
                rows.append((tuple(unit), bound, 0.0))
                rows.append((tuple(-v for v in unit), bound, 0.0))

    T = transport_matrix(n, m - 1, tuple(y), x0)
    for i, b_idx in enumerate(space):
        base = float(P0.deriv(b_idx))
        if b_idx in up_A:
            rows.append((tuple(pad(0, T[i])), base, 0.0))
            rows.append((tuple(pad(0, -T[i])), -base, 0.0))
        else:
            bound = A_const * M0 * delta_b ** (m - sum(b_idx))
            rows.append((tuple(pad(0, T[i])), base + bound, 0.0))
            rows.append((tuple(pad(0, -T[i])), -base + bound, 0.0))
    return feasible(HPolytope.from_rows(dim, rows), 1.0).is_feasible


# ---------------------------------------------------------------------------
# smoothstep profiles


@lru_cache(maxsize=None)
def smoothstep_coeffs(m: int) -> tuple:
    """Ascending exact coefficients of the degree-(2m+1) step S_m on [0, 1]:
    S_m(0) = 0, S_m(1) = 1, derivatives through order m vanish at both ends,
    and S_m(t) + S_m(1 - t) = 1."""
    coefs = [Fraction(0)] * (2 * m + 2)
    for j in range(m + 1):
        coefs[m + j + 1] = Fraction(math.comb(m, j) * (-1) ** j, m + j + 1)
    total = sum(coefs)
    return tuple(c / total for c in coefs)


class Profile1D:
    """C^m piecewise polynomial of one variable.  pieces[i] holds ascending
    coefficients around breaks[i], valid on [breaks[i], breaks[i+1]); the
    function is the constant left of breaks[0] and right of breaks[-1]."""

    def __init__(self, breaks, pieces, left: float, right: float):
        if len(pieces) != len(breaks) - 1:
            raise ValueError("need one piece per gap")
        self.breaks = tuple(float(b) for b in breaks)
        self.pieces = tuple(tuple(float(c) for c in p) for p in pieces)
        self.left = float(left)
        self.right = float(right)

    def deriv(self, t: float, k: int) -> float:
        t = float(t)
        if t < self.breaks[0]:
            return self.left if k == 0 else 0.0
        if t >= self.breaks[-1]:
            return self.right if k == 0 else 0.0
        i = 0
        while t >= self.breaks[i + 1]:
            i += 1
        u = t - self.breaks[i]
        c = self.pieces[i]
        out = 0.0
        for j in range(len(c) - 1, k - 1, -1):
            fac = 1.0
            for v in range(j, j - k, -1):
                fac *= v
            out = out * u + c[j] * fac
        return out

    def series(self) -> AnalyticSeries:
        return AnalyticSeries("profile", lambda s0, k: self.deriv(s0, k), lambda s0: True)


def _scaled_step(m: int, w: float, falling: bool):
    """Ascending coefficients of S_m(u / w) in u, or of 1 - S_m(u / w)."""
    out = [float(c) / w**j for j, c in enumerate(smoothstep_coeffs(m))]
    if falling:
        out = [-v for v in out]
        out[0] += 1.0
    return out


def plateau_profile(lo: float, hi: float, over: float, m: int) -> Profile1D:
    """0 outside [lo - over, hi + over], 1 on [lo + over, hi - over],
    smoothstep ramps of width 2 over at the ends."""
    if lo + over > hi - over + 1e-15:
        raise ValueError("overhang too wide for the interval")
    return Profile1D(
        (lo - over, lo + over, hi - over, hi + over),
        (
            _scaled_step(m, 2 * over, falling=False),
            (1.0,),
            _scaled_step(m, 2 * over, falling=True),
        ),
        0.0,
        0.0,
    )


def falling_profile(a: float, b: float, m: int) -> Profile1D:
    """1 for t <= a, 0 for t >= b, smoothstep in between."""
    return Profile1D((a, b), (_scaled_step(m, b - a, falling=True),), 1.0, 0.0)


def annulus_profile(r1: float, r2: float, r3: float, r4: float, m: int) -> Profile1D:
    """0 | rise | 1 on [r2, r3] | fall | 0."""
    return Profile1D(
        (r1, r2, r3, r4),
        (
            _scaled_step(m, r2 - r1, falling=False),
            (1.0,),
            _scaled_step(m, r4 - r3, falling=True),
        ),
        0.0,
        0.0,
    )


def _sq_dist_jet(x, c, degree: int) -> Jet:
    """Jet at x of y -> |y - c|^2."""
    x = tuple(float(v) for v in x)
    n = len(x)
    d = {(0,) * n: sum((a - b) ** 2 for a, b in zip(x, c))}
    for v in range(n):
        if degree >= 1:
            d[tuple(1 if i == v else 0 for i in range(n))] = 2.0 * (x[v] - c[v])
        if degree >= 2:
            d[tuple(2 if i == v else 0 for i in range(n))] = 2.0
    return Jet.from_derivs(x, degree, d)


def _poly_jet_at(P: Jet, y, degree: int) -> Jet:
    """Degree-`degree` jet at y of the polynomial P represents.  Padding with
    zero slots happens before transport; truncation after."""
    if degree > P.degree:
        P = Jet.from_derivs(P.basepoint, degree, dict(zip(P.space, P.derivs)))
    Q = taylor_transport(P, y)
    if Q.degree > degree:
        d = dict(zip(Q.space, Q.derivs))
        Q = Jet.from_derivs(Q.basepoint, degree, {a: d[a] for a in multiindices(Q.n, degree)})
    return Q


# ---------------------------------------------------------------------------
# partitions of unity


class PartitionOfUnity:
    """Per-leaf tensor-smoothstep bumps normalized so the sum (or the sum of
    squares) is one on the covered region; supports stay inside the 65/64
    dilations."""

    def __init__(self, cubes, m: int, squared: bool = False):
        if not cubes:
            raise ValueError("no cubes")
        self.cubes = tuple(cubes)
        self.m = int(m)
        self.squared = bool(squared)
        self.profiles = []
        self.supports = []
        for Q in self.cubes:
            over = Q.side / 128.0
            self.profiles.append(
                tuple(plateau_profile(l, h, over, self.m) for l, h in zip(Q.lo, Q.hi))
            )
            self.supports.append(Q.dilate(DILATION))
        self._index = {}
        for i, Q in enumerate(self.cubes):
            self._index.setdefault(Q.level, {})[Q.corner] = i
        self.report = {}

    def active(self, x) -> list:
        """Indices of cubes whose support box contains x, by lattice lookup."""
        out = []
        for level, table in self._index.items():
            side = 2.0**level
            base = tuple(math.floor(v / side) for v in x)
            for off in itertools.product((-1, 0, 1), repeat=len(x)):
                i = table.get(tuple(b + o for b, o in zip(base, off)))
                if i is not None and i not in out and _box_contains(self.supports[i], x):
                    out.append(i)
        return sorted(out)

    def psi_value(self, i: int, x) -> float:
        out = 1.0
        for prof, v in zip(self.profiles[i], x):
            out *= prof.deriv(v, 0)
            if out == 0.0:
                return 0.0
        return out

    def psi_jet(self, i: int, x, degree: int) -> Jet:
        x = tuple(float(v) for v in x)
        n = len(x)
        per_axis = [
            [prof.deriv(v, k) for k in range(degree + 1)]
            for prof, v in zip(self.profiles[i], x)
        ]
        d = {}
        for b in multiindices(n, degree):
            val = 1.0
            for v in range(n):
                val *= per_axis[v][b[v]]
                if val == 0.0:
                    break
            if val != 0.0:
                d[b] = val
        return Jet.from_derivs(x, degree, d)

    def theta_jets(self, x, degree: int | None = None) -> dict:
        """Jets of every bump alive at x; empty off the covered region."""
        degree = self.m if degree is None else int(degree)
        x = tuple(float(v) for v in x)
        zero = (0,) * len(x)
        live = {}
        for i in self.active(x):
            P = self.psi_jet(i, x, degree)
            # a zero value forces a zero jet here (C^m junction at the
            # support edge), so dropping such terms is exact
            if float(P.deriv(zero)) != 0.0:
                live[i] = P
        if not live:
            return {}
        if self.squared:
            total = None
            for P in live.values():
                sq = jet_multiply(P, P)
                total = sq if total is None else total + sq
            inv = jet_analytic_compose(total, INV_SQRT)
        else:
            total = None
            for P in live.values():
                total = P if total is None else total + P
            inv = jet_analytic_compose(total, RECIPROCAL)
        return {i: jet_multiply(P, inv) for i, P in live.items()}

    def theta_value(self, i: int, x) -> float:
        th = self.theta_jets(x, degree=0)
        P = th.get(i)
        return float(P.deriv((0,) * len(x))) if P is not None else 0.0

    def verify(self, samples_per_axis: int | None = None, tol: float = 1e-10) -> dict:
        """Grid check of the partition invariants; measured C_pou included."""
        n = self.cubes[0].n
        lo = tuple(min(Q.lo[v] for Q in self.cubes) for v in range(n))
        hi = tuple(max(Q.hi[v] for Q in self.cubes) for v in range(n))
        if samples_per_axis is None:
            budget = 10**n * len(self.cubes)
            samples_per_axis = max(4, int(round(budget ** (1.0 / n))))
        axes = [np.linspace(lo[v] + 1e-9, hi[v] - 1e-9, samples_per_axis) for v in range(n)]
        worst_sum = 0.0
        c_pou = 0.0
        space = multiindices(n, self.m)
        zero = (0,) * n
        for x in itertools.product(*axes):
            th = self.theta_jets(x)
            if not th:
                continue
            s = sum(
                float(P.deriv(zero)) ** 2 if self.squared else float(P.deriv(zero))
                for P in th.values()
            )
            worst_sum = max(worst_sum, abs(s - 1.0))
            for i, P in th.items():
                dQ = self.cubes[i].side
                for b in space:
                    c_pou = max(c_pou, abs(float(P.deriv(b))) * dQ ** sum(b))
        support_ok = True
        for i, Q in enumerate(self.cubes):
            probe = tuple(h + 1e-12 + Q.side / 64.0 for h in self.supports[i][1])
            if self.psi_value(i, probe) != 0.0:
                support_ok = False
        self.report = {
            "sum_residual": worst_sum,
            "sum_ok": worst_sum <= tol,
            "support_ok": support_ok,
            "C_pou": c_pou,
            "samples_per_axis": samples_per_axis,
        }
        return self.report


def build_pou(tree: CZTree, m: int, squared: bool = False, verify: bool = True) -> PartitionOfUnity:
    pou = PartitionOfUnity(tree.leaves, m, squared)
    if verify:
        rep = pou.verify()
        if not rep["sum_ok"] or not rep["support_ok"]:
            raise AssertionError(f"partition-of-unity invariants failed: {rep}")
    return pou


# ---------------------------------------------------------------------------
# payloads and gluing


class _PolyPayload:
    """A jet regarded as a global polynomial."""

    def __init__(self, P: Jet):
        self.P = P

    def __call__(self, x) -> float:
        return self.P.evaluate(x)

    def jet_at(self, x, degree: int) -> Jet:
        return _poly_jet_at(self.P, x, degree)


class _ZeroPayload:
    def __call__(self, x) -> float:
        return 0.0

    def jet_at(self, x, degree: int) -> Jet:
        return Jet.zeros(tuple(float(v) for v in x), degree)


def _as_payload(obj):
    if obj is None:
        return _ZeroPayload()
    if isinstance(obj, Jet):
        return _PolyPayload(obj)
    if hasattr(obj, "jet_at"):
        return obj
    raise TypeError(f"payload {obj!r} is neither a jet nor jet-evaluable")


class GluedFunction:
    """F = sum theta_Q F_Q (theta_Q^2 F_Q in squared mode); zero off the
    covered window."""

    def __init__(self, tree: CZTree, pou: PartitionOfUnity, payloads: dict):
        self.tree = tree
        self.pou = pou
        self.m = pou.m
        self.payloads = {}
        for i, Q in enumerate(pou.cubes):
            if Q in payloads:
                self.payloads[i] = _as_payload(payloads[Q])

    def _payload(self, i):
        try:
            return self.payloads[i]
        except KeyError:
            raise KeyError(f"no payload on touching leaf {self.pou.cubes[i]}") from None

    def jet_at(self, x, degree: int | None = None) -> Jet:
        degree = self.m if degree is None else int(degree)
        x = tuple(float(v) for v in x)
        th = self.pou.theta_jets(x, degree)
        if not th:
            return Jet.zeros(x, degree)
        out = None
        for i, T in th.items():
            w = jet_multiply(T, T) if self.pou.squared else T
            term = jet_multiply(w, self._payload(i).jet_at(x, degree))
            out = term if out is None else out + term
        return out

    def __call__(self, x) -> float:
        x = tuple(float(v) for v in x)
        th = self.pou.theta_jets(x, degree=0)
        zero = (0,) * len(x)
        total = 0.0
        for i, T in th.items():
            t = float(T.deriv(zero))
            if self.pou.squared:
                t *= t
            total += t * self._payload(i)(x)
        return total


def glue(tree: CZTree, pou: PartitionOfUnity, local_payloads: dict) -> GluedFunction:
    """Payloads keyed by leaf cube: jets, jet-evaluable objects, or None for
    an identically zero contribution."""
    return GluedFunction(tree, pou, local_payloads)


# ---------------------------------------------------------------------------
# nonnegative witnesses


class NonnegWitness:
    """A certified-nonnegative function reproducing the jet at its basepoint.

    Lipschitz-top flavor: chi(y) (P(y) + M |y - x0|^m), where the correction
    has a zero jet of the carried degree.  Uniform-top flavor: chi(y) (P(y)
    + M sum_k b_k phi_k(y)) with dyadic annulus bumps phi_k and corrections
    b_k read off the jet itself, so the finite sum vanishes identically near
    x0.  Support lies in the unit ball around the basepoint."""

    def __init__(self, P: Jet, M: float, flavor: str, m: int | None = None, k_max: int = 40):
        if flavor not in ("Cm", "Cm11"):
            raise ValueError(f"unknown flavor {flavor!r}")
        self.P = P
        self.M = float(M)
        self.flavor = flavor
        self.m = int(m) if m is not None else (P.degree if flavor == "Cm" else P.degree + 1)
        ok, cert = nonneg_member(P, self.M, flavor, m=self.m)
        if not ok:
            raise ValueError("jet is not a certified member; no witness exists")
        self.cert = cert
        self.x0 = P.basepoint
        self.n = P.n
        # squared-radius profiles: chi = 1 on r <= 1/2, supported in r <= 1;
        # phi = 1 on 1/2 <= r <= 2, supported in 1/4 < r < 4
        self.chi = falling_profile(0.25, 1.0, self.m)
        if flavor == "Cm":
            scale = (1.0 / self.M) if self.M > 0 else 1.0
            self.b = dyadic_corrections(P * scale, k_max)
            self.phi = annulus_profile(1.0 / 16, 0.25, 4.0, 16.0, self.m)
            self.truncation_bound = self.b[-1] if self.b else 0.0
        else:
            self.b = None
            self.truncation_bound = 0.0

    def __call__(self, y) -> float:
        y = tuple(float(v) for v in y)
        s = sum((a - b) ** 2 for a, b in zip(y, self.x0))
        if s >= 1.0:
            return 0.0
        core = self.P.evaluate(y)
        if self.flavor == "Cm11":
            core += self.M * s ** (self.m / 2.0)
        elif s > 0.0:
            for k, bk in enumerate(self.b):
                if bk == 0.0:
                    continue
                sk = 4.0**k * s
                if 1.0 / 16 < sk < 16.0:
                    core += self.M * bk * self.phi.deriv(sk, 0)
        return self.chi.deriv(s, 0) * core

    def jet_at(self, y, degree: int) -> Jet:
        y = tuple(float(v) for v in y)
        s_jet = _sq_dist_jet(y, self.x0, degree)
        s0 = float(s_jet.deriv((0,) * self.n))
        if s0 >= 1.0:
            return Jet.zeros(y, degree)
        chi_jet = jet_analytic_compose(s_jet, self.chi.series())
        core = _poly_jet_at(self.P, y, degree)
        if self.flavor == "Cm11":
            core = core + _radial_power_jet(s_jet, self.m) * self.M
        elif s0 > 0.0:
            for k, bk in enumerate(self.b):
                if bk == 0.0:
                    continue
                if 1.0 / 16 < 4.0**k * s0 < 16.0:
                    core = core + jet_analytic_compose(s_jet * 4.0**k, self.phi.series()) * (
                        self.M * bk
                    )
        return jet_multiply(chi_jet, core)


def _radial_power_jet(s_jet: Jet, m: int) -> Jet:
    """Jet of |y - c|^m = s^(m/2) from the jet of s.  At s = 0 with odd m
    the true derivatives below order m vanish and the order-m slots are set
    to zero by convention (the function is only C^(m-1,1) there)."""
    if m % 2 == 0:
        return jet_analytic_compose(s_jet, power_series(m // 2))
    s0 = float(s_jet.deriv((0,) * s_jet.n))
    if s0 > 0.0:
        return jet_analytic_compose(s_jet, power_series(m / 2.0))
    return Jet.zeros(s_jet.basepoint, s_jet.degree)


def nonneg_witness(
    P: Jet, M: float, flavor: str, m: int | None = None, k_max: int = 40
) -> NonnegWitness:
    return NonnegWitness(P, M, flavor, m=m, k_max=k_max)


# ---------------------------------------------------------------------------
# whitney extension


class ExtensionFunction(GluedFunction):
    """Glued extension of a Whitney field, with a norm-measurement helper."""

    def __init__(self, tree, pou, payloads, W: WhitneyField, m: int):
        super().__init__(tree, pou, payloads)
        self.W = W
        self.m = m

    def measure_norm(self, samples_per_axis: int = 40) -> dict:
        lo, hi = self.tree.region
        n = len(lo)
        axes = [np.linspace(lo[v], hi[v], samples_per_axis) for v in range(n)]
        space = multiindices(n, min(self.m, self.pou.m))
        sup: dict = {}
        gmin = float("inf")
        for x in itertools.product(*axes):
            J = self.jet_at(x)
            gmin = min(gmin, float(J.deriv((0,) * n)))
            for b in space:
                sup[b] = max(sup.get(b, 0.0), abs(float(J.deriv(b))))
        return {
            "sup_derivs": {"".join(map(str, k)): v for k, v in sorted(sup.items())},
            "grid_min": gmin,
            "samples_per_axis": samples_per_axis,
        }


def whitney_extend(
    W: WhitneyField,
    m: int | None = None,
    nonneg: dict | None = None,
    pad: float = 3.0,
    scale_cap: float = 1.0,
) -> ExtensionFunction:
    """Extension over a stopping-time tree: Type-1 leaves carry the payload
    of their unique nearby data point, Type-2 leaves that of the nearest
    point seen by the parent, Type-3 leaves zero.  Payloads are the jets
    themselves as polynomials, or certified nonnegative witnesses when
    nonneg={"M": scalar, "flavor": "Cm"|"Cm11"} is given (precomputed
    witnesses may ride along under nonneg["witnesses"])."""
    m = (W.degree + 1) if m is None else int(m)
    if not math.isfinite(whitney_seminorm(W, m=m)):
        raise ValueError("infinite compatibility seminorm")
    E = W.points
    tree = cz_decompose(region_for(E, pad), ok_simple(E, scale_cap))
    tree.classify(E, scale_cap)
    if nonneg is not None:
        given = dict(nonneg.get("witnesses", {}))
        point_payload = {
            x: given.get(x) or nonneg_witness(W[x], float(nonneg["M"]), nonneg["flavor"], m=m)
            for x in E
        }
    else:
        point_payload = {x: W[x] for x in E}
    payloads = {}
    for Q in tree.leaves:
        payloads[Q] = None if tree.tags[Q] == 3 else point_payload[tree.witness[Q]]
    tree.payloads = dict(payloads)
    pou = build_pou(tree, m)
    return ExtensionFunction(tree, pou, payloads, W, m)


# ---------------------------------------------------------------------------
# exports


def export_grid_csv(path, fn, grid_points, betas=()):
    """Columns x_1..x_n, F, then one column per requested derivative."""
    grid_points = [tuple(float(v) for v in x) for x in grid_points]
    n = len(grid_points[0]) if grid_points else 0
    betas = [tuple(int(v) for v in b) for b in betas]
    if betas and not hasattr(fn, "jet_at"):
        raise TypeError("derivative columns need a jet-evaluable function")
    need = max((sum(b) for b in betas), default=0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            [f"x_{v + 1}" for v in range(n)]
            + ["F"]
            + ["d_" + "".join(map(str, b)) for b in betas]
        )
        zero = (0,) * n
        for x in grid_points:
            if betas:
                J = fn.jet_at(x, need)
                w.writerow(
                    [repr(v) for v in x]
                    + [repr(float(J.deriv(zero)))]
                    + [repr(float(J.deriv(b))) for b in betas]
                )
            else:
                w.writerow([repr(v) for v in x] + [repr(float(fn(x)))])
