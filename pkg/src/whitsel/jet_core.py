"""Jet algebra over finite point sets.

A jet is a truncated Taylor expansion stored as raw derivative values at a
basepoint; the 1/alpha! factors appear explicitly in evaluation and transport
formulas so displayed equations map one-to-one to code.  This module also owns
the two order relations (on multi-indices and on sets of multi-indices) that
the basis machinery depends on, truncated jet products and analytic
composition, exact re-expansion at a new basepoint, and the
Taylor-incompatibility seminorm of Whitney fields.

Scalars are double precision; exact rational arithmetic lives in the polytope
module where LP certificates need it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import product as _iterproduct

import numpy as np

__all__ = [
    "GlobalConfig",
    "IndexSet",
    "Jet",
    "WhitneyField",
    "AnalyticSeries",
    "SQRT",
    "INV_SQRT",
    "RECIPROCAL",
    "EXP",
    "dimP",
    "multiindices",
    "index_of",
    "factorial_mi",
    "idx_compare",
    "set_compare",
    "is_monotonic",
    "monotonic_sets",
    "monotonic_predecessors",
    "jet_multiply",
    "jet_analytic_compose",
    "unity_pair_from_S",
    "taylor_transport",
    "transport_matrix",
    "whitney_seminorm",
    "jet_of_function",
    "jet_to_json",
    "jet_from_json",
    "format_multiindex",
    "parse_multiindex",
    "power_series",
    "BasepointMismatch",
    "JetDomainError",
]


class BasepointMismatch(ValueError):
    """Binary jet operation applied to jets at different basepoints."""


class JetDomainError(ValueError):
    """Analytic composition evaluated outside the series' domain."""


def dimP(m: int, n: int) -> int:
    """Dimension of the space of real polynomials of degree <= m-1 on R^n."""
    return math.comb(m - 1 + n, n)


@dataclass(frozen=True)
class GlobalConfig:
    """Problem-wide parameters: smoothness m, ambient dimension n, target
    dimension D for vector-valued selection (D=1 for scalar problems)."""

    m: int
    n: int
    D: int = 1

    def __post_init__(self):
        if self.m < 1 or self.n < 1 or self.D < 1:
            raise ValueError("m, n, D must all be >= 1")

    @property
    def dimP(self) -> int:
        return dimP(self.m, self.n)


# ---------------------------------------------------------------------------
# multi-index order


def _prefix_sums(a):
    total = 0
    out = []
    for v in a:
        total += v
        out.append(total)
    return out


def idx_sort_key(a):
    """Sort key realizing the multi-index order: the largest position at
    which prefix sums differ decides, smaller prefix sum first."""
    return tuple(reversed(_prefix_sums(a)))


def idx_compare(a, b) -> int:
    """-1, 0, or 1 as a < b, a = b, a > b in the multi-index order."""
    a, b = tuple(a), tuple(b)
    if len(a) != len(b):
        raise ValueError("multi-indices of different lengths")
    ka, kb = idx_sort_key(a), idx_sort_key(b)
    return (ka > kb) - (ka < kb)


@lru_cache(maxsize=None)
def multiindices(n: int, degree: int) -> tuple[tuple[int, ...], ...]:
    """All multi-indices on n variables of order <= degree, ascending in the
    multi-index order; every jet's deriv vector is aligned to this list."""
    if n < 1 or degree < 0:
        raise ValueError("need n >= 1 and degree >= 0")
    idxs = [
        a for a in _iterproduct(range(degree + 1), repeat=n) if sum(a) <= degree
    ]
    return tuple(sorted(idxs, key=idx_sort_key))


@lru_cache(maxsize=None)
def index_of(n: int, degree: int) -> dict:
    """Position of each multi-index in multiindices(n, degree)."""
    return {a: i for i, a in enumerate(multiindices(n, degree))}


@lru_cache(maxsize=None)
def factorial_mi(alpha) -> int:
    """alpha! = prod alpha_i!"""
    out = 1
    for v in alpha:
        out *= math.factorial(v)
    return out


# ---------------------------------------------------------------------------
# index sets and the set order


@dataclass(frozen=True)
class IndexSet:
    """Subset of the multi-indices of order <= m-1, stored as a bitmask over
    the canonical ordering of multiindices(n, m-1)."""

    m: int
    n: int
    mask: int

    @classmethod
    def of(cls, m: int, n: int, members) -> "IndexSet":
        pos = index_of(n, m - 1)
        mask = 0
        for a in members:
            a = tuple(int(v) for v in a)
            if a not in pos:
                raise ValueError(f"{a} is not a multi-index of order <= {m - 1}")
            mask |= 1 << pos[a]
        return cls(m, n, mask)

    @classmethod
    def empty(cls, m: int, n: int) -> "IndexSet":
        return cls(m, n, 0)

    @classmethod
    def full(cls, m: int, n: int) -> "IndexSet":
        return cls(m, n, (1 << dimP(m, n)) - 1)

    @property
    def members(self) -> tuple[tuple[int, ...], ...]:
        space = multiindices(self.n, self.m - 1)
        return tuple(a for i, a in enumerate(space) if self.mask >> i & 1)

    def __contains__(self, a) -> bool:
        pos = index_of(self.n, self.m - 1)
        a = tuple(int(v) for v in a)
        return a in pos and bool(self.mask >> pos[a] & 1)

    def __len__(self) -> int:
        return self.mask.bit_count()

    def add(self, a) -> "IndexSet":
        return IndexSet.of(self.m, self.n, self.members + (tuple(a),))

    def is_full(self) -> bool:
        return self.mask == (1 << dimP(self.m, self.n)) - 1


def set_compare(A: IndexSet, B: IndexSet) -> int:
    """Total order on index sets: the least element of the symmetric
    difference decides; the set containing it is smaller.  The full set is
    minimal and the empty set is maximal."""
    if (A.m, A.n) != (B.m, B.n):
        raise ValueError("index sets over different multi-index spaces")
    diff = A.mask ^ B.mask
    if diff == 0:
        return 0
    low = (diff & -diff).bit_length() - 1  # position of least differing index
    return -1 if A.mask >> low & 1 else 1


def is_monotonic(A: IndexSet) -> bool:
    """True iff alpha in A and alpha+gamma of order <= m-1 imply
    alpha+gamma in A."""
    space = multiindices(A.n, A.m - 1)
    budget = A.m - 1
    for a in A.members:
        for g in space:
            s = tuple(ai + gi for ai, gi in zip(a, g))
            if sum(s) <= budget and s not in A:
                return False
    return True


@lru_cache(maxsize=None)
def monotonic_sets(m: int, n: int) -> tuple[IndexSet, ...]:
    """All monotonic index sets, ascending in set_compare.  Guarded: the
    enumeration is over all 2^dimP subsets."""
    L = dimP(m, n)
    if L > 16:
        raise ValueError(f"monotonic-set enumeration guarded at dimP <= 16, got {L}")
    import functools

    sets = [
        s for mask in range(1 << L) if is_monotonic(s := IndexSet(m, n, mask))
    ]
    return tuple(sorted(sets, key=functools.cmp_to_key(set_compare)))


def monotonic_predecessors(A: IndexSet) -> int:
    """Number of monotonic sets strictly below A in the set order (a plain
    counter used for reporting; nothing recurses on it)."""
    return sum(1 for B in monotonic_sets(A.m, A.n) if set_compare(B, A) < 0)


# ---------------------------------------------------------------------------
# jets


@dataclass(frozen=True)
class Jet:
    """Polynomial of degree <= degree as raw derivatives at a basepoint.

    derivs[i] = d^alpha P(basepoint) with alpha = multiindices(n, degree)[i].
    Immutable after construction."""

    basepoint: tuple[float, ...]
    degree: int
    derivs: np.ndarray

    def __post_init__(self):
        bp = tuple(float(v) for v in self.basepoint)
        arr = np.array(self.derivs, dtype=float)
        L = len(multiindices(len(bp), self.degree))
        if arr.shape != (L,):
            raise ValueError(f"expected {L} derivative slots, got {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "basepoint", bp)
        object.__setattr__(self, "derivs", arr)

    # -- constructors -------------------------------------------------------

    @classmethod
    def zeros(cls, basepoint, degree: int) -> "Jet":
        n = len(tuple(basepoint))
        return cls(tuple(basepoint), degree, np.zeros(len(multiindices(n, degree))))

    @classmethod
    def constant(cls, basepoint, degree: int, value: float) -> "Jet":
        out = np.zeros(len(multiindices(len(tuple(basepoint)), degree)))
        out[index_of(len(tuple(basepoint)), degree)[(0,) * len(tuple(basepoint))]] = value
        return cls(tuple(basepoint), degree, out)

    @classmethod
    def monomial(cls, basepoint, degree: int, alpha, coeff: float = 1.0) -> "Jet":
        """Jet of coeff * (y - basepoint)^alpha; its only nonzero raw
        derivative is alpha! * coeff at alpha."""
        bp = tuple(basepoint)
        alpha = tuple(int(v) for v in alpha)
        if sum(alpha) > degree:
            raise ValueError("monomial order exceeds jet degree")
        out = np.zeros(len(multiindices(len(bp), degree)))
        out[index_of(len(bp), degree)[alpha]] = coeff * factorial_mi(alpha)
        return cls(bp, degree, out)

    @classmethod
    def from_derivs(cls, basepoint, degree: int, mapping) -> "Jet":
        bp = tuple(basepoint)
        pos = index_of(len(bp), degree)
        out = np.zeros(len(pos))
        for a, v in dict(mapping).items():
            out[pos[tuple(int(x) for x in a)]] = float(v)
        return cls(bp, degree, out)

    # -- accessors ----------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.basepoint)

    @property
    def space(self) -> tuple[tuple[int, ...], ...]:
        return multiindices(self.n, self.degree)

    def deriv(self, alpha) -> float:
        return float(self.derivs[index_of(self.n, self.degree)[tuple(int(v) for v in alpha)]])

    def evaluate(self, y) -> float:
        """P(y) = sum_alpha derivs[alpha]/alpha! * (y - basepoint)^alpha."""
        dx = np.asarray(y, dtype=float) - np.asarray(self.basepoint)
        total = 0.0
        for i, a in enumerate(self.space):
            term = self.derivs[i] / factorial_mi(a)
            for d, p in zip(dx, a):
                if p:
                    term *= d**p
            total += term
        return float(total)

    def as_dict(self) -> dict:
        return {a: float(v) for a, v in zip(self.space, self.derivs)}

    # -- linear arithmetic (same basepoint, same degree) ---------------------

    def _check_compatible(self, other: "Jet"):
        if self.basepoint != other.basepoint:
            raise BasepointMismatch(
                f"basepoints differ: {self.basepoint} vs {other.basepoint}"
            )
        if self.degree != other.degree:
            raise ValueError("jet degrees differ")

    def __add__(self, other: "Jet") -> "Jet":
        self._check_compatible(other)
        return Jet(self.basepoint, self.degree, self.derivs + other.derivs)

    def __sub__(self, other: "Jet") -> "Jet":
        self._check_compatible(other)
        return Jet(self.basepoint, self.degree, self.derivs - other.derivs)

    def __mul__(self, scalar: float) -> "Jet":
        return Jet(self.basepoint, self.degree, self.derivs * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "Jet":
        return Jet(self.basepoint, self.degree, -self.derivs)


# ---------------------------------------------------------------------------
# jet products and analytic composition


@lru_cache(maxsize=None)
def _product_table(n: int, degree: int):
    """Index triples (gamma, alpha, gamma-alpha) with multinomial weights for
    the truncated Leibniz product on raw derivatives."""
    space = multiindices(n, degree)
    pos = index_of(n, degree)
    G, A, B, W = [], [], [], []
    for g in space:
        for a in space:
            if all(ai <= gi for ai, gi in zip(a, g)):
                b = tuple(gi - ai for gi, ai in zip(g, a))
                w = 1
                for gi, ai in zip(g, a):
                    w *= math.comb(gi, ai)
                G.append(pos[g])
                A.append(pos[a])
                B.append(pos[b])
                W.append(w)
    return (
        np.array(G, dtype=np.intp),
        np.array(A, dtype=np.intp),
        np.array(B, dtype=np.intp),
        np.array(W, dtype=float),
    )


def jet_multiply(P: Jet, Q: Jet) -> Jet:
    """Truncated product P (.) Q: the jet of the polynomial product, cut back
    to the common degree at the common basepoint."""
    P._check_compatible(Q)
    G, A, B, W = _product_table(P.n, P.degree)
    out = np.zeros_like(P.derivs)
    np.add.at(out, G, W * P.derivs[A] * Q.derivs[B])
    return Jet(P.basepoint, P.degree, out)


@dataclass(frozen=True)
class AnalyticSeries:
    """Scalar analytic function presented through its derivatives: deriv(s0, k)
    returns g^(k)(s0); in_domain guards evaluation."""

    name: str
    deriv: callable
    in_domain: callable


def power_series(p: float) -> AnalyticSeries:
    """t |-> t^p.  Integer p >= 0 is entire; integer p < 0 needs t != 0;
    fractional p needs t > 0."""

    def deriv(s0: float, k: int) -> float:
        c = 1.0
        for i in range(k):
            c *= p - i
        if c == 0.0:
            return 0.0
        return c * s0 ** (p - k)

    if p == int(p) and p >= 0:
        dom = lambda s0: True
    elif p == int(p):
        dom = lambda s0: s0 != 0.0
    else:
        dom = lambda s0: s0 > 0.0
    return AnalyticSeries(f"power[{p}]", deriv, dom)


SQRT = power_series(0.5)
INV_SQRT = power_series(-0.5)
RECIPROCAL = power_series(-1.0)
EXP = AnalyticSeries("exp", lambda s0, k: math.exp(s0), lambda s0: True)


def jet_analytic_compose(S: Jet, series: AnalyticSeries) -> Jet:
    """Jet of g(S(.)) truncated to S.degree.  Writing Shat = S - S(basepoint),
    the sum  sum_k g^(k)(s0)/k! Shat^k  is finite at jet level because Shat
    has no constant term, so each product raises the vanishing order."""
    s0 = float(S.derivs[index_of(S.n, S.degree)[(0,) * S.n]])
    if not series.in_domain(s0):
        raise JetDomainError(f"{series.name} undefined at leading value {s0}")
    shat = S - Jet.constant(S.basepoint, S.degree, s0)
    out = Jet.constant(S.basepoint, S.degree, series.deriv(s0, 0))
    power = Jet.constant(S.basepoint, S.degree, 1.0)
    for k in range(1, S.degree + 1):
        power = jet_multiply(power, shat)
        out = out + power * (series.deriv(s0, k) / math.factorial(k))
    return out


def unity_pair_from_S(S: Jet, c0: float) -> tuple[Jet, Jet]:
    """Jets Q1 = sqrt(1/2 + c0 S), Q2 = sqrt(1/2 - c0 S) with
    Q1 (.) Q1 + Q2 (.) Q2 = 1 exactly at jet level.  Requires
    |c0 * S(basepoint)| < 1/2 so both square roots are defined."""
    s0 = float(S.derivs[index_of(S.n, S.degree)[(0,) * S.n]])
    if abs(c0 * s0) >= 0.5:
        raise JetDomainError(
            f"|c0 * S(basepoint)| = {abs(c0 * s0)} >= 1/2; square roots leave their domain"
        )
    half = Jet.constant(S.basepoint, S.degree, 0.5)
    Q1 = jet_analytic_compose(half + S * c0, SQRT)
    Q2 = jet_analytic_compose(half - S * c0, SQRT)
    return Q1, Q2


# ---------------------------------------------------------------------------
# transport, seminorm, finite differences


@lru_cache(maxsize=None)
def _transport_table(n: int, degree: int):
    """(i_out, i_in, gamma) triples: the beta slot at the new basepoint reads
    the beta+gamma slot at the old one, weighted by dx^gamma / gamma!."""
    space = multiindices(n, degree)
    pos = index_of(n, degree)
    rows = []
    for b in space:
        for g in space:
            s = tuple(bi + gi for bi, gi in zip(b, g))
            if sum(s) <= degree:
                rows.append((pos[b], pos[s], g))
    return tuple(rows)


def transport_matrix(n: int, degree: int, src, dst) -> np.ndarray:
    """Matrix T with (derivs at dst) = T @ (derivs at src); exact re-expansion
    of a polynomial of degree <= degree based at src."""
    dx = np.array([float(v) for v in dst]) - np.array([float(v) for v in src])
    L = len(multiindices(n, degree))
    T = np.zeros((L, L))
    for i_out, i_in, g in _transport_table(n, degree):
        w = 1.0 / factorial_mi(g)
        for d, p in zip(dx, g):
            if p:
                w *= d**p
        T[i_out, i_in] += w
    return T


def taylor_transport(P: Jet, y) -> Jet:
    """The same polynomial re-expanded at basepoint y; exact and linear in
    the derivative vector, with inverse transport back to P.basepoint."""
    y = tuple(float(v) for v in y)
    return Jet(y, P.degree, transport_matrix(P.n, P.degree, P.basepoint, y) @ P.derivs)


class WhitneyField:
    """A jet attached to each point of a finite set, all of one degree; the
    basepoint of each jet is its key."""

    def __init__(self, jets):
        entries: dict[tuple, Jet] = {}
        degree = None
        for P in jets:
            if degree is None:
                degree = P.degree
            elif P.degree != degree:
                raise ValueError("mixed jet degrees in a Whitney field")
            if P.basepoint in entries:
                raise ValueError(f"duplicate point {P.basepoint}")
            entries[P.basepoint] = P
        if not entries:
            raise ValueError("empty Whitney field")
        self.entries = entries
        self.degree = degree

    @property
    def points(self) -> tuple[tuple[float, ...], ...]:
        return tuple(self.entries)

    def __getitem__(self, point) -> Jet:
        return self.entries[tuple(float(v) for v in point)]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries.values())


def whitney_seminorm(W: WhitneyField, m: int | None = None) -> float:
    """max over ordered pairs x != y and |alpha| <= degree of
    |d^alpha (P^x - P^y)(x)| / |x-y|^(m - |alpha|); m defaults to degree + 1
    (fields of degree-m jets pass m explicitly); zero for a singleton."""
    pts = W.points
    if len(pts) == 1:
        return 0.0
    if m is None:
        m = W.degree + 1
    space = multiindices(len(pts[0]), W.degree)
    best = 0.0
    for x in pts:
        for y in pts:
            if x == y:
                continue
            diff = W[x] - taylor_transport(W[y], x)
            dist = float(np.linalg.norm(np.array(x) - np.array(y)))
            for a, v in zip(space, diff.derivs):
                best = max(best, abs(float(v)) / dist ** (m - sum(a)))
    return best


def _central_diff_stencil(k: int):
    """Nodes (in units of h) and weights of the k-th central difference."""
    return [
        (k / 2.0 - j, (-1) ** j * math.comb(k, j)) for j in range(k + 1)
    ]


def jet_of_function(f, x, degree: int, h: float = 1e-3, domain=None) -> Jet:
    """Central-difference estimate of the jet of f at x, O(h^2) per order.
    domain, when given as (lo, hi) box arrays, rejects stencils that leave it."""
    if h <= 0:
        raise ValueError("need h > 0")
    x = tuple(float(v) for v in x)
    n = len(x)
    out = {}
    for alpha in multiindices(n, degree):
        axes = [_central_diff_stencil(k) for k in alpha]
        total = 0.0
        for combo in _iterproduct(*axes):
            node = tuple(xi + h * c[0] for xi, c in zip(x, combo))
            if domain is not None:
                lo, hi = domain
                if any(v < l or v > u for v, l, u in zip(node, lo, hi)):
                    raise ValueError(f"stencil node {node} outside domain")
            w = 1.0
            for c in combo:
                w *= c[1]
            total += w * f(node)
        out[alpha] = total / h ** sum(alpha)
    return Jet.from_derivs(x, degree, out)


# ---------------------------------------------------------------------------
# serialization


def format_multiindex(alpha) -> str:
    return "(" + ",".join(str(int(v)) for v in alpha) + ")"


def parse_multiindex(s: str) -> tuple[int, ...]:
    body = s.strip()
    if not (body.startswith("(") and body.endswith(")")):
        raise ValueError(f"bad multi-index literal {s!r}")
    return tuple(int(v) for v in body[1:-1].split(","))


def jet_to_json(P: Jet) -> dict:
    return {
        "basepoint": list(P.basepoint),
        "degree": P.degree,
        "derivs": {format_multiindex(a): float(v) for a, v in zip(P.space, P.derivs)},
    }


def jet_from_json(doc: dict) -> Jet:
    return Jet.from_derivs(
        tuple(doc["basepoint"]),
        int(doc["degree"]),
        {parse_multiindex(k): v for k, v in doc["derivs"].items()},
    )
