"""End-to-end solvers and finiteness experiments: minimal-M Whitney-field
feasibility over subsets, global interpolant construction by gluing, vector
selection through the one-higher-dimension lifting, and per-level emptiness
scans with exact Helly cross-checks.

The minimal-M problems are single LPs with the scale M as one more variable
(every constraint is affine in (jet coefficients, M)); the nonnegativity
flavors wrap that LP in an outer-linearization cut loop driven by the
certified membership test."""

from __future__ import annotations

import itertools
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from .jet_core import (
    GlobalConfig,
    Jet,
    WhitneyField,
    factorial_mi,
    index_of,
    multiindices,
)
from .polytope import (
    GuardExceeded,
    HPolytope,
    InfeasibleError,
    UnboundedError,
    box_rows,
    feasible,
    minimize_linear,
)
from .shape_field import (
    ShapeField,
    make_custom_field,
    make_interp_field,
    make_nonneg_field,
    nonneg_member,
    nonneg_violation,
    whitney_pair_rows,
)
from .cz_whitney import ExtensionFunction, whitney_extend

__all__ = [
    "PointConstraint",
    "SelectionInstance",
    "FinitenessReport",
    "VectorExtension",
    "min_M_subset",
    "finiteness_scan",
    "solve_global",
    "lift_instance",
    "gamma_fp_scan",
    "SUBSET_SCAN_GUARD",
    "CUT_ROUNDS",
]

SUBSET_SCAN_GUARD = 4096
CUT_ROUNDS = 50
KINDS = ("equality", "convex", "nonneg")


@dataclass(frozen=True)
class PointConstraint:
    """equality: payload is the value (scalar, or length-D vector);
    convex: payload is a target HPolytope in R^D (fixed, instantiated at 1);
    nonneg: payload is a scalar value >= 0 and the interpolant must stay
    nonnegative everywhere."""

    kind: str
    payload: object

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown constraint kind {self.kind!r}")


class SelectionInstance:
    """A finite constrained-selection problem: one constraint per point."""

    def __init__(self, config: GlobalConfig, E, constraints, flavor: str = "Cm11"):
        self.config = config
        self.E = tuple(tuple(float(v) for v in x) for x in E)
        if len(set(self.E)) != len(self.E):
            raise ValueError("duplicate points")
        if any(len(x) != config.n for x in self.E):
            raise ValueError("point dimension does not match config.n")
        if len(constraints) != len(self.E):
            raise ValueError("need one constraint per point")
        if flavor not in ("Cm", "Cm11"):
            raise ValueError(f"unknown flavor {flavor!r}")
        self.flavor = flavor
        self.constraints = {}
        for x, c in zip(self.E, constraints):
            if not isinstance(c, PointConstraint):
                raise TypeError("constraints must be PointConstraint values")
            self.constraints[x] = self._check_constraint(c)
        kinds = {c.kind for c in self.constraints.values()}
        if "nonneg" in kinds and kinds != {"nonneg"}:
            raise ValueError("nonneg instances must be nonneg at every point")
        if "convex" in kinds and "nonneg" in kinds:
            raise ValueError("convex targets cannot mix with nonneg constraints")

    def _check_constraint(self, c: PointConstraint) -> PointConstraint:
        D = self.config.D
        if c.kind == "equality":
            vals = (c.payload,) if np.isscalar(c.payload) else tuple(c.payload)
            if len(vals) != D:
                raise ValueError(f"equality payload needs {D} values")
            return PointConstraint("equality", tuple(float(v) for v in vals))
        if c.kind == "nonneg":
            if D != 1:
                raise ValueError("nonneg constraints are scalar (D=1)")
            v = float(c.payload)
            if v < 0:
                raise ValueError("nonneg payload must be >= 0")
            return PointConstraint("nonneg", v)
        K = c.payload
        if not isinstance(K, HPolytope) or K.dim != D:
            raise ValueError(f"convex payload must be an HPolytope in R^{D}")
        if not feasible(K, 1.0).is_feasible:
            raise ValueError("empty convex target")
        return c

    # -- derived structure ----------------------------------------------------

    @property
    def is_nonneg(self) -> bool:
        return any(c.kind == "nonneg" for c in self.constraints.values())

    @property
    def is_vector(self) -> bool:
        return self.config.D > 1 or any(
            c.kind == "convex" for c in self.constraints.values()
        )

    @property
    def degree(self) -> int:
        """Jets carry degree m-1, except the uniform-top nonneg flavor where
        the top-order slots take part in the membership test."""
        if self.is_nonneg and self.flavor == "Cm":
            return self.config.m
        return self.config.m - 1

    def scalar_field(self) -> ShapeField:
        """The per-point constraint sets of a scalar instance as a field."""
        if self.is_vector:
            raise ValueError("vector instances have no scalar field; lift first")
        f = [
            self.constraints[x].payload if self.constraints[x].kind == "nonneg"
            else self.constraints[x].payload[0]
            for x in self.E
        ]
        if self.is_nonneg:
            return make_nonneg_field(self.E, f, self.flavor, self.config.m)
        return make_interp_field(self.E, f, self.config.m)


@dataclass
class FinitenessReport:
    k: int
    M_k: dict
    M_global: float
    ratio: float
    extremes: dict
    timing: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        sizes = sorted(self.M_k)
        for a, b in zip(sizes, sizes[1:]):
            if self.M_k[b] < self.M_k[a] - 1e-9:
                raise AssertionError(f"M_k not monotone: {self.M_k}")
        if sizes and self.M_global < self.M_k[sizes[-1]] - 1e-9:
            raise AssertionError("M_global below a subset bound")
        if self.ratio < 1.0 - 1e-9:
            raise AssertionError(f"ratio {self.ratio} < 1")

    def to_json(self) -> dict:
        """Deterministic payload; timing is reported separately."""
        return {
            "k": self.k,
            "M_k": {str(s): self.M_k[s] for s in sorted(self.M_k)},
            "M_global": self.M_global,
            "ratio": self.ratio,
            "extremes": {
                str(s): {"subset": [list(p) for p in v["subset"]], "M": v["M"]}
                for s, v in sorted(self.extremes.items())
            },
        }


# ---------------------------------------------------------------------------
# minimal-M LP


def _assemble_min_M(inst: SelectionInstance, pts, extra_cuts, M_cap=None):
    """Rows of the joint LP over (stacked jets, M); returns (polytope, layout).
    Layout: point pts[pi], coordinate d occupies block (pi*D+d)*L; M is the
    last variable."""
    cfg = inst.config
    degree, m, n, D = inst.degree, cfg.m, cfg.n, cfg.D
    L = len(multiindices(n, degree))
    zero_slot = index_of(n, degree)[(0,) * n]
    dim = len(pts) * D * L + 1
    Mi = dim - 1
    block = lambda pi, d: (pi * D + d) * L
    rows = []

    def emb(pi, d, a, b0, b1):
        v = [0.0] * dim
        v[block(pi, d) : block(pi, d) + L] = [float(t) for t in a]
        v[Mi] = -float(b1)
        rows.append((tuple(v), float(b0), 0.0))

    pair_rows, _, _ = whitney_pair_rows(pts, degree, m, n)
    for d in range(D):
        for a, b0, b1 in pair_rows:
            v = [0.0] * dim
            for pi in range(len(pts)):
                v[block(pi, d) : block(pi, d) + L] = [float(t) for t in a[pi * L : (pi + 1) * L]]
            v[Mi] = -float(b1)
            rows.append((tuple(v), float(b0), 0.0))

    scalar_field = None if inst.is_vector else inst.scalar_field()
    for pi, x in enumerate(pts):
        c = inst.constraints[x]
        if scalar_field is not None:
            for a, b0, b1 in scalar_field.polytope_at(x).rows:
                emb(pi, 0, a, b0, b1)
            if c.kind == "nonneg" and c.payload == 0.0 and m >= 2:
                # sign-change faces at zero-valued points: P + M|y-x|^m >= 0
                # forces the gradient to vanish, and for m = 3 (n = 1) a
                # nonnegative quadratic slot; cuts alone never reach a face
                for a, slot in index_of(n, degree).items():
                    if sum(a) == 1:
                        unit = [0.0] * L
                        unit[slot] = 1.0
                        emb(pi, 0, unit, 0.0, 0.0)
                        emb(pi, 0, [-u for u in unit], 0.0, 0.0)
                    elif sum(a) == 2 and m == 3 and n == 1:
                        unit = [0.0] * L
                        unit[slot] = -1.0
                        emb(pi, 0, unit, 0.0, 0.0)
            continue
        for d in range(D):
            for a, b0, b1 in box_rows(L):
                emb(pi, d, a, b0, b1)
        if c.kind == "equality":
            for d, val in enumerate(c.payload):
                unit = [0.0] * L
                unit[zero_slot] = 1.0
                emb(pi, d, unit, val, 0.0)
                emb(pi, d, [-u for u in unit], -val, 0.0)
        else:
            A_K, b_K = c.payload.instantiate(1.0)
            for a_row, b_row in zip(A_K, b_K):
                v = [0.0] * dim
                for d in range(D):
                    v[block(pi, d) + zero_slot] = float(a_row[d])
                rows.append((tuple(v), float(b_row), 0.0))

    for x, y in extra_cuts:
        # P(y) + M |y - x|^m >= 0 linearized over the jet block at x
        pi = pts.index(x)
        r = math.dist(x, y)
        v = [0.0] * dim
        for a, slot in index_of(n, degree).items():
            w = 1.0
            for xv, yv, av in zip(x, y, a):
                w *= (yv - xv) ** av
            v[block(pi, 0) + slot] = -w / factorial_mi(a)
        v[Mi] = -(r**m)
        rows.append((tuple(v), 0.0, 0.0))

    v = [0.0] * dim
    v[Mi] = -1.0
    rows.append((tuple(v), 0.0, 0.0))
    if M_cap is not None:
        v = [0.0] * dim
        v[Mi] = 1.0
        rows.append((tuple(v), float(M_cap), 0.0))
    obj = [0.0] * dim
    obj[Mi] = 1.0
    return HPolytope.from_rows(dim, rows), obj, L, Mi, block


def _extract_fields(inst, pts, witness, L, block):
    D = inst.config.D
    degree = inst.degree
    zero_slot = index_of(inst.config.n, degree)[(0,) * inst.config.n]
    m, n = inst.config.m, inst.config.n
    fields = []
    for d in range(D):
        jets = []
        for pi, x in enumerate(pts):
            c = inst.constraints[x]
            vec = np.array([float(witness[block(pi, d) + s]) for s in range(L)])
            # pins are exact constraints; snap away LP residue
            if c.kind == "equality":
                vec[zero_slot] = c.payload[d]
            elif c.kind == "nonneg":
                vec[zero_slot] = c.payload
                if c.payload == 0.0 and m >= 2:
                    for a, slot in index_of(n, degree).items():
                        if sum(a) == 1:
                            vec[slot] = 0.0
                        elif sum(a) == 2 and m == 3 and n == 1:
                            vec[slot] = max(vec[slot], 0.0)
            jets.append(Jet(x, degree, vec))
        fields.append(WhitneyField(jets))
    return fields[0] if D == 1 else tuple(fields)


def min_M_subset(inst: SelectionInstance, S, exact: bool = False, M_cap=None):
    """Smallest M admitting a Whitney field on S with pairwise-compatibility
    and per-slot bounds at most M and every point constraint met; returns
    (M, field) with one WhitneyField per coordinate (a bare field when D=1).
    Vector instances use the coordinate-wise max norm; multiply by sqrt(D)
    for the Euclidean-norm bound.  Nonneg instances run an outer
    linearization loop on the certified membership test."""
    pts = sorted(tuple(tuple(float(v) for v in x) for x in S))
    if not pts:
        raise ValueError("empty subset")
    for x in pts:
        if x not in inst.constraints:
            raise ValueError(f"{x} is not an instance point")
    cuts = []
    m = inst.config.m
    for _ in range(CUT_ROUNDS + 1):
        poly, obj, L, Mi, block = _assemble_min_M(inst, pts, cuts, M_cap=M_cap)
        try:
            M, witness = minimize_linear(poly, obj, 1.0, exact=exact)
        except InfeasibleError as e:
            cap = "" if M_cap is None else f" under the cap M <= {M_cap}"
            raise InfeasibleError(f"no Whitney field on {pts}{cap}: {e}") from e
        M = float(M)
        fields = _extract_fields(inst, pts, witness, L, block)
        if not inst.is_nonneg:
            return M, fields
        W = fields
        failures = []
        for P in W:
            if nonneg_member(P, max(M, 0.0), inst.flavor, m=m)[0]:
                continue
            y, val = nonneg_violation(P, max(M, 0.0), m)
            failures.append((P.basepoint, tuple(float(v) for v in y), float(val)))
        if not failures:
            return M, fields
        sharp = [(x, y) for x, y, val in failures if val < -1e-9 * max(M, 1.0)]
        if sharp:
            cuts.extend(sharp)
            continue
        # only hairline violations remain: the optimum sits on the boundary
        # of the true (nonlinear) set, so certify at a nudged-up scale
        bump = max(M * 1e-9, 1e-12)
        for _ in range(40):
            M_try = M + bump
            bump *= 4.0
            if M_cap is not None and M_try > M_cap:
                raise InfeasibleError(f"certifying the optimum needs M above the cap {M_cap}")
            if all(nonneg_member(P, M_try, inst.flavor, m=m)[0] for P in W):
                return M_try, fields
        raise GuardExceeded(
            f"membership stalls at {failures[0][0]} with violation {failures[0][2]}; "
            "no scale bump certifies the optimizer"
        )
    raise GuardExceeded(f"cut loop did not settle in {CUT_ROUNDS} rounds")


# ---------------------------------------------------------------------------
# finiteness scan


def finiteness_scan(
    inst: SelectionInstance,
    k_max: int,
    exact: bool = False,
    guard_subsets: int = SUBSET_SCAN_GUARD,
    workers: int = 1,
) -> FinitenessReport:
    """Max of the per-subset minimal M over all subsets of size <= k_max,
    against the global minimal M.  Subsets enumerate lexicographically over
    the sorted points; the critical subset per size is recorded.  A feasible
    subset family with an infeasible global instance is a hard error."""
    E = sorted(inst.E)
    k_max = min(int(k_max), len(E))
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    total = sum(math.comb(len(E), k) for k in range(1, k_max + 1))
    if total > guard_subsets:
        raise GuardExceeded(f"{total} subsets exceed the guard {guard_subsets}")
    t0 = time.perf_counter()

    def solve(S):
        return S, min_M_subset(inst, S, exact=exact)[0]

    subsets = [S for k in range(1, k_max + 1) for S in itertools.combinations(E, k)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(solve, subsets))
    else:
        results = [solve(S) for S in subsets]

    M_k: dict = {}
    extremes: dict = {}
    for S, val in results:
        k = len(S)
        if k not in extremes or (val, S) > (extremes[k]["M"], tuple(extremes[k]["subset"])):
            extremes[k] = {"subset": list(S), "M": val}
    running = 0.0
    for k in range(1, k_max + 1):
        running = max(running, extremes[k]["M"])
        M_k[k] = running
    t1 = time.perf_counter()
    try:
        M_global, _ = min_M_subset(inst, E, exact=exact)
    except InfeasibleError:
        raise AssertionError(
            "global instance infeasible while every scanned subset is feasible; "
            "the constraint system is finite and affine, so this cannot happen"
        ) from None
    t2 = time.perf_counter()
    M_cap = M_k[k_max]
    if M_cap > 0:
        ratio = M_global / M_cap
    else:
        ratio = 1.0 if M_global <= 1e-12 else float("inf")
    ratio = max(ratio, 1.0)
    return FinitenessReport(
        k=k_max,
        M_k=M_k,
        M_global=float(M_global),
        ratio=float(ratio),
        extremes=extremes,
        timing={"subsets_s": t1 - t0, "global_s": t2 - t1, "n_subsets": len(subsets)},
    )


# ---------------------------------------------------------------------------
# global solve


class VectorExtension:
    """Component-wise glued extension of a vector Whitney field."""

    def __init__(self, components):
        self.components = tuple(components)

    @property
    def D(self) -> int:
        return len(self.components)

    def __call__(self, x):
        return tuple(c(x) for c in self.components)

    def jet_at(self, x, degree: int | None = None):
        return tuple(c.jet_at(x, degree) for c in self.components)

    def component(self, d: int) -> ExtensionFunction:
        return self.components[d]


def solve_global(
    inst: SelectionInstance,
    exact: bool = False,
    grid_samples: int = 40,
    pad: float = 3.0,
    M_cap=None,
):
    """(M*, F, diagnostics): minimal-M field over all of E, glued to a global
    function, then verified against every point constraint (equality residual
    <= 1e-8, convex-target slack >= -1e-8, nonneg grid min >= -1e-9)."""
    M, fields = min_M_subset(inst, inst.E, exact=exact, M_cap=M_cap)
    cfg = inst.config
    t0 = time.perf_counter()
    if inst.is_vector:
        F = VectorExtension(
            whitney_extend(Wd, m=cfg.m, pad=pad) for Wd in (fields if cfg.D > 1 else (fields,))
        )
    elif inst.is_nonneg:
        F = whitney_extend(fields, m=cfg.m, nonneg={"M": M, "flavor": inst.flavor}, pad=pad)
    else:
        F = whitney_extend(fields, m=cfg.m, pad=pad)
    diagnostics = {"M_star": M, "residuals": {}, "build_s": None}
    worst_eq = 0.0
    worst_slack = 0.0
    for x in inst.E:
        c = inst.constraints[x]
        if c.kind == "convex":
            val = np.array(F(x), dtype=float)
            A_K, b_K = c.payload.instantiate(1.0)
            slack = float(min(b_K - A_K @ val)) if len(b_K) else 0.0
            diagnostics["residuals"][x] = {"kind": "convex", "min_slack": slack}
            worst_slack = min(worst_slack, slack)
            if slack < -1e-8:
                raise AssertionError(f"target membership violated at {x}: slack {slack}")
        else:
            want = c.payload if c.kind == "nonneg" else c.payload[0]
            got = F(x) if cfg.D == 1 else F(x)[0]
            res = abs(got - want)
            diagnostics["residuals"][x] = {"kind": c.kind, "residual": res}
            worst_eq = max(worst_eq, res)
            if res > 1e-8:
                raise AssertionError(f"equality violated at {x}: |{got} - {want}| = {res}")
    diagnostics["worst_equality_residual"] = worst_eq
    diagnostics["worst_target_slack"] = worst_slack
    comps = F.components if inst.is_vector else (F,)
    norm = 0.0
    gmin = float("inf")
    for comp in comps:
        rep = comp.measure_norm(samples_per_axis=grid_samples)
        norm = max(norm, max(rep["sup_derivs"].values()))
        gmin = min(gmin, rep["grid_min"])
    diagnostics["measured_norm"] = norm
    diagnostics["grid_min"] = gmin
    if inst.is_nonneg and gmin < -1e-9:
        raise AssertionError(f"nonneg extension dips to {gmin}")
    if inst.is_vector:
        diagnostics["euclid_factor"] = math.sqrt(cfg.D)
    diagnostics["norm_ratio"] = (norm / M) if M > 0 else (1.0 if norm <= 1e-9 else float("inf"))
    diagnostics["build_s"] = time.perf_counter() - t0
    return M, F, diagnostics


# ---------------------------------------------------------------------------
# lifting


def lift_instance(inst: SelectionInstance):
    """Scalar shape field on E x {0} in R^(n+D) encoding the vector targets:
    degree-m jets R with R(x0,0) = 0, the xi-gradient inside K(x0), and all
    slots bounded by M.  Returns (field, lift, unlift); lift sends a vector
    jet (one degree-(m-1) jet per coordinate) to sum_i xi_i J(F_i), unlift
    reads the xi-gradient slots back off a lifted jet."""
    cfg = inst.config
    if not all(c.kind == "convex" for c in inst.constraints.values()):
        raise ValueError("lifting needs convex targets at every point")
    m, n, D = cfg.m, cfg.n, cfg.D
    for x, c in inst.constraints.items():
        for d in range(D):
            obj = [0.0] * D
            for sgn in (1.0, -1.0):
                obj[d] = sgn
                try:
                    minimize_linear(c.payload, obj, 1.0)
                except UnboundedError:
                    raise ValueError(
                        f"target at {x} is unbounded along coordinate {d}; add box rows"
                    ) from None
    N = n + D
    degree = m
    pos = index_of(N, degree)
    L = len(multiindices(N, degree))
    zero_slot = pos[(0,) * N]
    grad_slots = [pos[(0,) * n + tuple(1 if i == d else 0 for i in range(D))] for d in range(D)]
    polys = {}
    for x in inst.E:
        K = inst.constraints[x].payload
        rows = list(box_rows(L))
        unit = [0.0] * L
        unit[zero_slot] = 1.0
        rows.append((tuple(unit), 0.0, 0.0))
        rows.append((tuple(-u for u in unit), 0.0, 0.0))
        A_K, b_K = K.instantiate(1.0)
        for a_row, b_row in zip(A_K, b_K):
            v = [0.0] * L
            for d in range(D):
                v[grad_slots[d]] = float(a_row[d])
            rows.append((tuple(v), float(b_row), 0.0))
        polys[x + (0.0,) * D] = HPolytope.from_rows(L, rows)
    field = make_custom_field(GlobalConfig(m, N), polys, degree, kind="lifted")

    small = multiindices(n, m - 1)

    def lift(vjets) -> Jet:
        vjets = tuple(vjets)
        if len(vjets) != D:
            raise ValueError(f"need {D} coordinate jets")
        x0 = vjets[0].basepoint
        derivs = {}
        for d, J in enumerate(vjets):
            if J.basepoint != x0 or J.degree != m - 1:
                raise ValueError("coordinate jets must share basepoint and degree m-1")
            e_d = tuple(1 if i == d else 0 for i in range(D))
            for a, v in zip(J.space, J.derivs):
                derivs[tuple(a) + e_d] = float(v)
        return Jet.from_derivs(x0 + (0.0,) * D, degree, derivs)

    def unlift(R: Jet):
        if R.degree != degree or R.n != N:
            raise ValueError("not a lifted jet")
        x = R.basepoint[:n]
        out = []
        for d in range(D):
            e_d = tuple(1 if i == d else 0 for i in range(D))
            out.append(Jet.from_derivs(x, m - 1, {a: R.deriv(tuple(a) + e_d) for a in small}))
        return tuple(out)

    return field, lift, unlift


# ---------------------------------------------------------------------------
# per-level emptiness


def _emptiness_lp(field: ShapeField, x, M0, subsets, exact):
    """One joint LP: a shared jet at x plus an independent partner block per
    point of each subset, pair rows inside each subset system, membership
    rows everywhere.  Returns feasibility."""
    L = field.L
    degree, m, n = field.degree, field.config.m, field.n
    blocks = {("x",): 0}
    dim = L
    for si, S in enumerate(subsets):
        for p in S:
            if p != x:
                blocks[(si, p)] = dim
                dim += L
    rows = []

    def emb_poly(off, poly):
        for a, b0, b1 in poly.rows:
            v = [0.0] * dim
            v[off : off + L] = [float(t) for t in a]
            rows.append((tuple(v), b0, b1))

    emb_poly(0, field.polytope_at(x))
    for si, S in enumerate(subsets):
        pts = sorted(set(S) | {x})
        local, free, _ = whitney_pair_rows(pts, degree, m, n)
        offs = [0 if p == x else blocks[(si, p)] for p in free]
        for a, b0, b1 in local:
            v = [0.0] * dim
            for fi, off in enumerate(offs):
                seg = a[fi * L : (fi + 1) * L]
                for t, val in enumerate(seg):
                    v[off + t] += float(val)
            rows.append((tuple(v), b0, b1))
        for p in S:
            if p != x:
                emb_poly(blocks[(si, p)], field.polytope_at(p))
    return feasible(HPolytope.from_rows(dim, rows), M0, exact=exact).is_feasible


def gamma_fp_scan(
    inst_or_field,
    x,
    M0: float,
    l_max: int,
    exact: bool = False,
    helly: bool = False,
    subset_cap: int | None = None,
):
    """Per-level emptiness of the bounded-subset sets at (x, M0): level l
    demands a jet at x extendable over every subset of size (L+2)^l (capped
    at |E|).  Emptiness is one joint LP per level; with helly=True the full
    joint system is cross-checked against (L+1)-wise joint systems of the
    per-subset sets, which must agree for convex sets in R^L."""
    field = inst_or_field.scalar_field() if isinstance(inst_or_field, SelectionInstance) else inst_or_field
    if not field.is_polytopal:
        raise GuardExceeded("per-level emptiness scans need a polytopal field")
    x = tuple(float(v) for v in x)
    L = field.L
    table = []
    for l in range(l_max + 1):
        k_eff = min((L + 2) ** l, len(field.points))
        if subset_cap is not None:
            k_eff = min(k_eff, subset_cap)
        entry = {"l": l, "k_eff": k_eff}
        if l == 0 or k_eff == 0:
            entry["nonempty"] = bool(feasible(field.polytope_at(x), M0, exact=exact).is_feasible)
            entry["n_subsets"] = 0
            table.append(entry)
            continue
        subsets = list(itertools.combinations(sorted(field.points), k_eff))
        if len(subsets) > SUBSET_SCAN_GUARD:
            raise GuardExceeded(f"{len(subsets)} subset systems exceed the guard")
        entry["n_subsets"] = len(subsets)
        full = _emptiness_lp(field, x, M0, subsets, exact)
        entry["nonempty"] = bool(full)
        if helly:
            width = min(L + 1, len(subsets))
            wise = all(
                _emptiness_lp(field, x, M0, list(combo), exact)
                for combo in itertools.combinations(subsets, width)
            )
            entry["helly"] = {"width": width, "wise_nonempty": bool(wise), "agree": wise == full}
            if wise != full:
                raise AssertionError(
                    f"Helly violation at level {l}: {width}-wise nonempty={wise} but full={full}"
                )
        table.append(entry)
    for a, b in zip(table, table[1:]):
        if b.get("nonempty") and not a.get("nonempty"):
            raise AssertionError("emptiness not monotone across levels")
    return table
