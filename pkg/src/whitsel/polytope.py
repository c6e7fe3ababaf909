"""Convex-set substrate over jet-coefficient vectors.

An HPolytope stores rows a . z <= b0 + M * b1, affine in a scale parameter M,
so one object represents a whole nested family of polyhedra (nested whenever
all b1 >= 0).  Two arithmetic backends: double precision through scipy's LP
solver with residual tolerance TOL_LP, and exact rationals through a dense
two-phase simplex with Bland's rule.  Exact mode is mandatory for Helly
self-tests and infeasibility certificates; float mode is the bulk path.

Fourier-Motzkin projection is exact parametrically in M: eliminating a
coordinate combines rows with multipliers that never touch the right-hand
side, so the projected rows remain valid (and complete) for every M >= 0
simultaneously.  Row pruning uses Farkas domination, which is likewise sound
uniformly in M.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.optimize import linprog

TOL_LP = 1e-9
FM_ELIMINATION_GUARD = 12

__all__ = [
    "TOL_LP",
    "FM_ELIMINATION_GUARD",
    "HPolytope",
    "FeasibilityResult",
    "GuardExceeded",
    "InfeasibleError",
    "UnboundedError",
    "feasible",
    "minimize_linear",
    "project",
    "chebyshev_center",
    "helly_check",
    "box_rows",
    "polytope_to_json",
    "polytope_from_json",
    "exact_lp",
]


class GuardExceeded(RuntimeError):
    """A desk-scale enumeration or elimination guard was hit."""


class InfeasibleError(RuntimeError):
    pass


class UnboundedError(RuntimeError):
    pass


@dataclass(frozen=True)
class HPolytope:
    """Rows (a, b0, b1) meaning a . z <= b0 + M*b1 for a scale parameter M."""

    dim: int
    rows: tuple

    @classmethod
    def from_rows(cls, dim: int, rows) -> "HPolytope":
        norm = []
        for a, b0, b1 in rows:
            a = tuple(a)
            if len(a) != dim:
                raise ValueError(f"row normal has length {len(a)}, expected {dim}")
            norm.append((a, b0, b1))
        return cls(dim, tuple(norm))

    def instantiate(self, M: float):
        """Concrete (A, b) at scale M, as float arrays."""
        if not self.rows:
            return np.zeros((0, self.dim)), np.zeros(0)
        A = np.array([[float(v) for v in a] for a, _, _ in self.rows])
        b = np.array([float(b0) + float(M) * float(b1) for _, b0, b1 in self.rows])
        return A, b

    def member(self, z, M: float, tol: float = TOL_LP) -> bool:
        A, b = self.instantiate(M)
        if A.shape[0] == 0:
            return True
        return bool(np.all(A @ np.asarray(z, dtype=float) <= b + tol))

    def intersect(self, other: "HPolytope") -> "HPolytope":
        if self.dim != other.dim:
            raise ValueError("dimension mismatch")
        return HPolytope(self.dim, self.rows + other.rows)


def box_rows(dim: int, indices=None):
    """Rows |z_i| <= M for the given coordinate indices (all by default)."""
    rows = []
    for i in indices if indices is not None else range(dim):
        e = [0.0] * dim
        e[i] = 1.0
        rows.append((tuple(e), 0.0, 1.0))
        rows.append((tuple(-v for v in e), 0.0, 1.0))
    return rows


@dataclass(frozen=True)
class FeasibilityResult:
    status: str  # "feasible" | "infeasible"
    witness: object = None  # coefficient vector when feasible
    certificate: object = None  # nonnegative row combination proving 0 <= -1

    @property
    def is_feasible(self) -> bool:
        return self.status == "feasible"


# ---------------------------------------------------------------------------
# float backend


def _float_lp(c, A_ub, b_ub, A_eq=None, b_eq=None, bounds=None):
    res = linprog(
        c,
        A_ub=A_ub if A_ub is not None and len(A_ub) else None,
        b_ub=b_ub if b_ub is not None and len(b_ub) else None,
        A_eq=A_eq if A_eq is not None and len(A_eq) else None,
        b_eq=b_eq if b_eq is not None and len(b_eq) else None,
        bounds=bounds if bounds is not None else (None, None),
        method="highs",
    )
    return res


def _feasible_float(P: HPolytope, M: float) -> FeasibilityResult:
    # maximize a uniform slack t (capped at 1) over a.z + t <= b; t* >= -tol
    # means feasible and returns an interior-leaning witness when one exists
    A, b = P.instantiate(M)
    if A.shape[0] == 0:
        return FeasibilityResult("feasible", np.zeros(P.dim))
    nrow = A.shape[0]
    A_ext = np.hstack([A, np.ones((nrow, 1))])
    res = _float_lp(
        np.concatenate([np.zeros(P.dim), [-1.0]]),
        A_ext,
        b,
        bounds=[(None, None)] * P.dim + [(None, 1.0)],
    )
    if res.status == 2:
        return FeasibilityResult("infeasible")
    if res.status != 0:
        raise RuntimeError(f"LP solver failure: {res.message}")
    t = res.x[-1]
    if t < -TOL_LP:
        return FeasibilityResult("infeasible")
    return FeasibilityResult("feasible", res.x[: P.dim])


# ---------------------------------------------------------------------------
# exact backend: dense two-phase simplex over Fractions, Bland's rule


def _simplex_core(A, b, c):
    """min c.x s.t. A x = b, x >= 0, all Fractions.  Returns
    (status, x, objective); status in {"optimal", "infeasible", "unbounded"}."""
    mrows = len(A)
    ncols = len(A[0]) if mrows else len(c)
    A = [row[:] for row in A]
    b = b[:]
    for i in range(mrows):
        if b[i] < 0:
            A[i] = [-v for v in A[i]]
            b[i] = -b[i]

    # phase 1 tableau with an artificial per row
    T = [A[i] + [Fraction(1) if j == i else Fraction(0) for j in range(mrows)] + [b[i]] for i in range(mrows)]
    basis = [ncols + i for i in range(mrows)]
    total = ncols + mrows

    def pivot(T, basis, r, s):
        piv = T[r][s]
        T[r] = [v / piv for v in T[r]]
        for i in range(len(T)):
            if i != r and T[i][s] != 0:
                f = T[i][s]
                T[i] = [vi - f * vr for vi, vr in zip(T[i], T[r])]
        basis[r] = s

    def run(T, basis, cost, ncols_active):
        # cost: list over columns (length ncols_active); returns True when optimal
        while True:
            # reduced costs: c_j - c_B . B^-1 A_j, computed from the tableau
            z = [Fraction(0)] * (ncols_active + 1)
            for i, bi in enumerate(basis):
                cb = cost[bi]
                if cb != 0:
                    for j in range(ncols_active + 1):
                        z[j] += cb * T[i][j]
            enter = -1
            for j in range(ncols_active):
                if cost[j] - z[j] < 0:
                    enter = j
                    break
            if enter < 0:
                return "optimal"
            leave, best = -1, None
            for i in range(len(T)):
                if T[i][enter] > 0:
                    ratio = T[i][-1] / T[i][enter]
                    if best is None or ratio < best or (ratio == best and basis[i] < basis[leave]):
                        best, leave = ratio, i
            if leave < 0:
                return "unbounded"
            pivot(T, basis, leave, enter)

    cost1 = [Fraction(0)] * ncols + [Fraction(1)] * mrows
    run(T, basis, cost1, total)
    obj1 = sum(cost1[basis[i]] * T[i][-1] for i in range(mrows))
    if obj1 > 0:
        return "infeasible", None, None

    # drive remaining artificials out of the basis; drop redundant rows
    for i in range(mrows - 1, -1, -1):
        if basis[i] >= ncols:
            s = next((j for j in range(ncols) if T[i][j] != 0), None)
            if s is None:
                del T[i]
                del basis[i]
            else:
                pivot(T, basis, i, s)

    # phase 2 on original columns only
    T = [row[:ncols] + [row[-1]] for row in T]
    cost2 = list(c)
    status = run(T, basis, cost2, ncols)
    if status == "unbounded":
        return "unbounded", None, None
    x = [Fraction(0)] * ncols
    for i, bi in enumerate(basis):
        x[bi] = T[i][-1]
    obj = sum(ci * xi for ci, xi in zip(c, x))
    return "optimal", x, obj


def exact_lp(A_ub, b_ub, c=None, A_eq=None, b_eq=None):
    """min c.x s.t. A_ub x <= b_ub, A_eq x = b_eq, x free; exact rationals.
    Returns (status, x, objective) with Fractions."""
    A_ub = [[Fraction(v) for v in row] for row in A_ub]
    b_ub = [Fraction(v) for v in b_ub]
    A_eq = [[Fraction(v) for v in row] for row in (A_eq or [])]
    b_eq = [Fraction(v) for v in (b_eq or [])]
    nv = len(A_ub[0]) if A_ub else (len(A_eq[0]) if A_eq else (len(c) if c else 0))
    c = [Fraction(v) for v in (c if c is not None else [0] * nv)]
    nslack = len(A_ub)

    # x = u - v with u, v >= 0; slacks on inequality rows
    rows, rhs = [], []
    for i, row in enumerate(A_ub):
        s = [Fraction(0)] * nslack
        s[i] = Fraction(1)
        rows.append(row + [-v for v in row] + s)
        rhs.append(b_ub[i])
    for row, bv in zip(A_eq, b_eq):
        rows.append(row + [-v for v in row] + [Fraction(0)] * nslack)
        rhs.append(bv)
    cc = c + [-v for v in c] + [Fraction(0)] * nslack
    status, xfull, obj = _simplex_core(rows, rhs, cc)
    if status != "optimal":
        return status, None, None
    x = [xfull[i] - xfull[nv + i] for i in range(nv)]
    return "optimal", x, obj


def _farkas_certificate(A, b):
    """For an infeasible system A z <= b (Fractions), find y >= 0 with
    y.A = 0 and y.b = -1; verified exactly before returning."""
    nrow = len(A)
    ncol = len(A[0]) if nrow else 0
    # variables y >= 0; equalities y.A = 0 (ncol rows) and y.b = -1
    eqs = [[A[i][j] for i in range(nrow)] for j in range(ncol)]
    rhs = [Fraction(0)] * ncol
    eqs.append([b[i] for i in range(nrow)])
    rhs.append(Fraction(-1))
    status, y, _ = _simplex_core(
        [row[:] for row in eqs], rhs[:], [Fraction(0)] * nrow
    )
    if status != "optimal":
        return None
    assert all(v >= 0 for v in y)
    for j in range(ncol):
        assert sum(y[i] * A[i][j] for i in range(nrow)) == 0
    assert sum(y[i] * b[i] for i in range(nrow)) == -1
    return tuple(y)


def _feasible_exact(P: HPolytope, M) -> FeasibilityResult:
    Mf = Fraction(M)
    A = [[Fraction(v) for v in a] for a, _, _ in P.rows]
    b = [Fraction(b0) + Mf * Fraction(b1) for _, b0, b1 in P.rows]
    if not A:
        return FeasibilityResult("feasible", tuple(Fraction(0) for _ in range(P.dim)))
    status, x, _ = exact_lp(A, b)
    if status == "optimal":
        return FeasibilityResult("feasible", tuple(x))
    cert = _farkas_certificate(A, b)
    return FeasibilityResult("infeasible", certificate=cert)


# ---------------------------------------------------------------------------
# public operations


def feasible(P: HPolytope, M: float, exact: bool = False) -> FeasibilityResult:
    """Decide emptiness of P at scale M; exact mode adds a verified
    infeasibility certificate."""
    return _feasible_exact(P, M) if exact else _feasible_float(P, M)


def minimize_linear(P: HPolytope, objective, M: float, exact: bool = False):
    """(optimal value, witness) of min objective . z over P at scale M."""
    if exact:
        A = [[Fraction(v) for v in a] for a, _, _ in P.rows]
        b = [Fraction(b0) + Fraction(M) * Fraction(b1) for _, b0, b1 in P.rows]
        status, x, obj = exact_lp(A, b, c=list(objective))
        if status == "infeasible":
            raise InfeasibleError("polytope empty at this scale")
        if status == "unbounded":
            raise UnboundedError("objective unbounded below")
        return obj, tuple(x)
    A, b = P.instantiate(M)
    res = _float_lp(np.asarray(objective, dtype=float), A, b)
    if res.status == 2:
        raise InfeasibleError("polytope empty at this scale")
    if res.status == 3:
        raise UnboundedError("objective unbounded below")
    if res.status != 0:
        raise RuntimeError(f"LP solver failure: {res.message}")
    return float(res.fun), res.x


def _snap(v, exact):
    if exact:
        return Fraction(v)
    f = float(v)
    return 0.0 if abs(f) < 1e-13 else f


def _combine(pos, neg, j, exact):
    """Nonnegative combination of one row with a[j] > 0 and one with a[j] < 0
    killing coordinate j; multipliers do not involve the right-hand side, so
    the result is valid for every scale M."""
    (ap, b0p, b1p) = pos
    (an, b0n, b1n) = neg
    wp = -_snap(an[j], exact)  # > 0
    wn = _snap(ap[j], exact)  # > 0
    a = tuple(_snap(wp * x + wn * y, exact) for x, y in zip(ap, an))
    return (a, wp * b0p + wn * b0n, wp * b1p + wn * b1n)


def _row_trivial(row, exact) -> bool:
    a, b0, b1 = row
    if any((x != 0) if exact else (abs(float(x)) > 1e-13) for x in a):
        return False
    return (b0 >= 0 if exact else float(b0) >= -1e-13) and (
        b1 >= 0 if exact else float(b1) >= -1e-13
    )


def _normalize_row(row, exact):
    a, b0, b1 = row
    if exact:
        scale = max((abs(v) for v in a if v != 0), default=Fraction(0))
        if scale == 0:
            return row
        return (tuple(v / scale for v in a), b0 / scale, b1 / scale)
    scale = max((abs(float(v)) for v in a), default=0.0)
    if scale < 1e-13:
        return row
    return (
        tuple(float(v) / scale for v in a),
        float(b0) / scale,
        float(b1) / scale,
    )


def _dedupe_rows(rows, exact):
    seen = set()
    out = []
    for row in rows:
        a, b0, b1 = _normalize_row(row, exact)
        key = (
            (a, b0, b1)
            if exact
            else (
                tuple(round(float(v), 12) for v in a),
                round(float(b0), 12),
                round(float(b1), 12),
            )
        )
        if key not in seen:
            seen.add(key)
            out.append((a, b0, b1))
    return out


def _dominated(row, others, exact) -> bool:
    """True if row follows from a nonnegative combination of the others with
    b0/b1 slack, hence is redundant uniformly in M >= 0."""
    if not others:
        return False
    a_r, b0_r, b1_r = row
    dim = len(a_r)
    k = len(others)
    if exact:
        # variables lam >= 0 (k), s0 >= 0, s1 >= 0 in equality form
        A_eq, b_eq = [], []
        for j in range(dim):
            A_eq.append([Fraction(o[0][j]) for o in others] + [Fraction(0), Fraction(0)])
            b_eq.append(Fraction(a_r[j]))
        A_eq.append([Fraction(o[1]) for o in others] + [Fraction(1), Fraction(0)])
        b_eq.append(Fraction(b0_r))
        A_eq.append([Fraction(o[2]) for o in others] + [Fraction(0), Fraction(1)])
        b_eq.append(Fraction(b1_r))
        status, _, _ = _simplex_core(A_eq, b_eq, [Fraction(0)] * (k + 2))
        return status == "optimal"
    A_eq = np.zeros((dim + 2, k))
    for i, (a, b0, b1) in enumerate(others):
        A_eq[:dim, i] = [float(v) for v in a]
        A_eq[dim, i] = float(b0)
        A_eq[dim + 1, i] = float(b1)
    b_eq = np.concatenate([[float(v) for v in a_r], [float(b0_r), float(b1_r)]])
    # slack on the two rhs rows only
    S = np.zeros((dim + 2, 2))
    S[dim, 0] = 1.0
    S[dim + 1, 1] = 1.0
    res = _float_lp(
        np.zeros(k + 2),
        A_eq=np.hstack([A_eq, S]),
        b_eq=b_eq,
        A_ub=None,
        b_ub=None,
        bounds=[(0, None)] * (k + 2),
    )
    return res.status == 0


def _prune(rows, exact):
    rows = [r for r in _dedupe_rows(rows, exact) if not _row_trivial(r, exact)]
    kept = list(rows)
    i = 0
    while i < len(kept):
        candidate = kept[i]
        rest = kept[:i] + kept[i + 1 :]
        if _dominated(candidate, rest, exact):
            kept = rest
        else:
            i += 1
    return kept


def project(P: HPolytope, keep, exact: bool = False) -> HPolytope:
    """Fourier-Motzkin projection onto the kept coordinates (ascending
    order), with redundancy pruning after every elimination.  Guarded at
    FM_ELIMINATION_GUARD eliminated coordinates."""
    keep = sorted(set(int(i) for i in keep))
    if any(i < 0 or i >= P.dim for i in keep):
        raise ValueError("keep indices out of range")
    eliminate = [i for i in range(P.dim) if i not in keep]
    if len(eliminate) > FM_ELIMINATION_GUARD:
        raise GuardExceeded(
            f"would eliminate {len(eliminate)} > {FM_ELIMINATION_GUARD} coordinates"
        )
    rows = [
        (tuple(_snap(v, exact) for v in a), _snap(b0, exact), _snap(b1, exact))
        for a, b0, b1 in P.rows
    ]
    remaining = list(range(P.dim))
    while eliminate:
        # eliminate the coordinate with the smallest pos*neg fill first
        def fill(coord):
            j = remaining.index(coord)
            p = sum(1 for a, _, _ in rows if (a[j] > 0 if exact else float(a[j]) > 1e-13))
            q = sum(1 for a, _, _ in rows if (a[j] < 0 if exact else float(a[j]) < -1e-13))
            return p * q - (p + q), coord

        coord = min(eliminate, key=fill)
        eliminate.remove(coord)
        j = remaining.index(coord)
        pos, neg, zero = [], [], []
        for row in rows:
            aj = row[0][j] if exact else float(row[0][j])
            if (aj > 0) if exact else (aj > 1e-13):
                pos.append(row)
            elif (aj < 0) if exact else (aj < -1e-13):
                neg.append(row)
            else:
                zero.append(row)
        combined = [_combine(p, q, j, exact) for p in pos for q in neg]
        drop = lambda row: (row[0][:j] + row[0][j + 1 :], row[1], row[2])
        rows = _prune([drop(r) for r in zero + combined], exact)
        remaining.pop(j)
    assert remaining == keep
    return HPolytope.from_rows(len(keep), rows)


def chebyshev_center(P: HPolytope, M: float, exact: bool = False):
    """Center of the largest inscribed ball at scale M, ties broken by
    lexicographic minimization coordinate by coordinate."""
    if exact:
        raise NotImplementedError("chebyshev_center is a float-mode operation")
    A, b = P.instantiate(M)
    if A.shape[0] == 0:
        raise UnboundedError("cannot center the universe; bound the polytope first")
    norms = np.linalg.norm(A, axis=1)
    keep = norms > 1e-13
    if not np.all(b[~keep] >= -TOL_LP):
        raise InfeasibleError("inconsistent scale-only rows")
    A_z, b_z, n_z = A[keep], b[keep], norms[keep]
    # max r s.t. A z + r ||a|| <= b
    ext = np.hstack([A_z, n_z[:, None]])
    res = _float_lp(
        np.concatenate([np.zeros(P.dim), [-1.0]]),
        ext,
        b_z,
        bounds=[(None, None)] * P.dim + [(0, None)],
    )
    if res.status == 2:
        raise InfeasibleError("polytope empty at this scale")
    if res.status == 3 or res.status != 0:
        raise UnboundedError("inscribed radius unbounded; polytope must be bounded")
    r_star = res.x[-1]
    # lexicographic refinement at radius r* - slack
    fixes_A, fixes_b = [], []
    center = res.x[: P.dim]
    for i in range(P.dim):
        obj = np.zeros(P.dim + 1)
        obj[i] = 1.0
        A_lex = ext
        b_lex = b_z
        A_eq = np.array(fixes_A) if fixes_A else None
        b_eq = np.array(fixes_b) if fixes_b else None
        res_i = _float_lp(
            obj,
            A_lex,
            b_lex,
            A_eq=A_eq,
            b_eq=b_eq,
            bounds=[(None, None)] * P.dim + [(max(0.0, r_star - 1e-10), None)],
        )
        if res_i.status != 0:
            break  # numerical corner: keep the last good center
        center = res_i.x[: P.dim]
        row = np.zeros(P.dim + 1)
        row[i] = 1.0
        fixes_A.append(row)
        fixes_b.append(center[i])
    return center


def helly_check(sets, k: int, exact: bool = False, M: float = 1.0) -> dict:
    """Whether every k-subfamily intersects and whether the full family does;
    flags the (never expected) combination all-k-feasible + full-infeasible.
    Intended with k = dim + 1."""
    sets = list(sets)
    if not sets:
        raise ValueError("empty family")
    dim = sets[0].dim
    if any(S.dim != dim for S in sets):
        raise ValueError("mixed dimensions")
    n = len(sets)
    if math.comb(n, min(k, n)) > 200000:
        raise GuardExceeded("too many k-subfamilies")
    failing = None
    all_k = True
    for combo in itertools.combinations(range(n), min(k, n)):
        inter = sets[combo[0]]
        for i in combo[1:]:
            inter = inter.intersect(sets[i])
        if not feasible(inter, M, exact=exact).is_feasible:
            all_k = False
            failing = combo
            break
    full = sets[0]
    for S in sets[1:]:
        full = full.intersect(S)
    full_ok = feasible(full, M, exact=exact).is_feasible
    return {
        "k": k,
        "num_sets": n,
        "all_k_subfamilies_feasible": all_k,
        "first_failing_subfamily": failing,
        "full_feasible": full_ok,
        "helly_consistent": not (all_k and not full_ok),
    }


# ---------------------------------------------------------------------------
# serialization


def polytope_to_json(P: HPolytope) -> dict:
    return {
        "dim": P.dim,
        "rows": [
            {"a": [float(v) for v in a], "b0": float(b0), "b1": float(b1)}
            for a, b0, b1 in P.rows
        ],
    }


def polytope_from_json(doc: dict) -> HPolytope:
    return HPolytope.from_rows(
        int(doc["dim"]),
        [(tuple(r["a"]), float(r["b0"]), float(r["b1"])) for r in doc["rows"]],
    )
