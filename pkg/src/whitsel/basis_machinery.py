"""Jet bases adapted to a shape field, and the constructive steps that create,
shrink, and move them.

A basis certificate packages, at a point x0 and scale M0, a base jet P0 and a
family of direction jets (P_alpha) indexed by a set A of multi-indices, with
Kronecker normalization, delta-scaled size bounds, and two-sided membership
perturbations staying inside Gamma(x0, C_B M0).  The operations:

  check_basis        re-verify all certificate conditions against a field
  rescale            coordinatewise dyadic rescaling concentrating each row
                     of a derivative matrix on one dominant column
  relabel            weak certificate -> full certificate on a monotonic
                     index set A_hat <= A (jet products with rescaled
                     monomials, then a linear solve)
  control_gamma_step basis + escaping jet -> strictly smaller monotonic
                     index set with a recentered base jet
  transport          bases at x0 over the l-th refinement -> bases at a
                     nearby y0 over the (l-1)-th, via partner witnesses

Every constructive operation re-verifies its stated conclusions; measured
constants are reported, never asserted against theory.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .jet_core import (
    IndexSet,
    Jet,
    factorial_mi,
    idx_sort_key,
    is_monotonic,
    jet_multiply,
    monotonic_sets,
    multiindices,
    set_compare,
    taylor_transport,
)
from .shape_field import C_GRID, ShapeField, partner_witness

__all__ = [
    "BasisCertificate",
    "RescalingResult",
    "PreconditionError",
    "RescalingError",
    "RelabelError",
    "TransportError",
    "check_basis",
    "rescale",
    "relabel",
    "control_gamma_step",
    "transport",
    "refinement_accessor",
    "measure_C_B",
    "l_of_A",
    "cert_to_json",
    "cert_from_json",
    "J_MAX",
    "KRONECKER_TOL",
]

J_MAX = 64
KRONECKER_TOL = 1e-9
A_GRID = tuple(2.0**-k for k in range(2, 13))  # backtracking grid for the smallness parameter


class PreconditionError(ValueError):
    pass


class RescalingError(RuntimeError):
    def __init__(self, msg, best_violation=None):
        super().__init__(msg)
        self.best_violation = best_violation


class RelabelError(RuntimeError):
    def __init__(self, msg, stage=None):
        super().__init__(msg)
        self.stage = stage


class TransportError(RuntimeError):
    pass


@dataclass
class BasisCertificate:
    """(A, delta, C_B)-basis data at base = (x0, M0, P0).

    vectors maps alpha in A to the jet P_alpha.  weak restricts the size
    bound to componentwise beta >= alpha only."""

    A: IndexSet
    delta: float
    C_B: float
    x0: tuple
    M0: float
    P0: Jet
    vectors: dict
    weak: bool = False
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.x0 = tuple(float(v) for v in self.x0)
        if self.delta <= 0 or self.C_B <= 0 or self.M0 <= 0:
            raise ValueError("delta, C_B, M0 must be positive")
        self.vectors = {tuple(a): j for a, j in self.vectors.items()}
        for a in self.vectors:
            if a not in self.A:
                raise ValueError(f"vector index {a} not in A")
        if set(self.vectors) != set(self.A.members):
            raise ValueError("vectors must cover A exactly")

    @property
    def m(self) -> int:
        return self.A.m

    @property
    def n(self) -> int:
        return self.A.n


def _ge_componentwise(beta, alpha) -> bool:
    return all(b >= a for b, a in zip(beta, alpha))


def check_basis(cert: BasisCertificate, field: ShapeField, tol: float = KRONECKER_TOL) -> dict:
    """Re-verify the four certificate conditions against the field; returns
    per-condition pass/fail with worst slacks.  A = empty reduces to the
    membership of P0 alone."""
    if cert.x0 not in field.points:
        raise PreconditionError(f"base point {cert.x0} not in E")
    m, n = cert.m, cert.n
    space = multiindices(n, m - 1)
    report = {"A": [list(a) for a in cert.A.members], "delta": cert.delta, "C_B": cert.C_B, "weak": cert.weak}

    ok3, worst3 = True, 0.0
    for a, P in cert.vectors.items():
        for b in cert.A.members:
            want = 1.0 if b == a else 0.0
            err = abs(P.deriv(b) - want)
            worst3 = max(worst3, err)
            ok3 = ok3 and err <= tol
    report["pb3"] = {"pass": ok3, "worst_err": worst3}

    ok4, worst4 = True, 0.0
    for a, P in cert.vectors.items():
        for b in space:
            if cert.weak and not _ge_componentwise(b, a):
                continue
            bound = cert.C_B * cert.delta ** (sum(a) - sum(b))
            excess = abs(P.deriv(b)) - bound
            worst4 = max(worst4, excess)
            ok4 = ok4 and excess <= tol * max(1.0, bound)
    report["pb4"] = {"pass": ok4, "worst_excess": worst4}

    M_scaled = cert.C_B * cert.M0
    mem_tol = 1e-7  # LP-built jets satisfy constraints to solver precision only
    ok1 = field.member(cert.x0, M_scaled, cert.P0, tol=mem_tol)
    report["pb1"] = {"pass": ok1}

    ok2 = True
    for a, P in cert.vectors.items():
        coeff = cert.M0 * cert.delta ** (cert.m - sum(a)) / cert.C_B
        for s in (1.0, -1.0):
            if not field.member(cert.x0, M_scaled, cert.P0 + P * (s * coeff), tol=mem_tol):
                ok2 = False
    report["pb2"] = {"pass": ok2}

    report["ok"] = ok1 and ok2 and ok3 and ok4
    return report


def measure_C_B(A_members, vectors, P0, delta, M0, field, x0, weak=False):
    """Smallest C on the geometric grid such that all four basis conditions
    hold with C_B = C; None if the grid is exhausted.  Both the membership
    scale and the perturbation coefficient are monotone in C, so the scan is
    a valid measurement."""
    m, n = field.config.m, field.n
    space = multiindices(n, m - 1)
    need = 1.0
    for a in A_members:
        P = vectors[tuple(a)]
        for b in space:
            if weak and not _ge_componentwise(b, a):
                continue
            v = abs(P.deriv(b)) * delta ** (sum(b) - sum(a))
            need = max(need, v)
    for C in C_GRID:
        if C + KRONECKER_TOL < need:
            continue
        M_scaled = C * M0
        if not field.member(x0, M_scaled, P0, tol=1e-7):
            continue
        good = True
        for a in A_members:
            P = vectors[tuple(a)]
            coeff = M0 * delta ** (m - sum(a)) / C
            if not all(
                field.member(x0, M_scaled, P0 + P * (s * coeff), tol=1e-7) for s in (1.0, -1.0)
            ):
                good = False
                break
        if good:
            return float(C)
    return None


# ---------------------------------------------------------------------------
# rescaling


@dataclass(frozen=True)
class RescalingResult:
    """Dyadic scales lambda_i and column map phi with row domination pb24."""

    lambdas: tuple
    phi: dict
    a: float
    c_of_a: float  # the achieved min lambda_i, recorded per pb21

    def lam_pow(self, beta) -> float:
        out = 1.0
        for l, b in zip(self.lambdas, beta):
            out *= l**b
        return out


def _phi_of(lambdas, A_members, space, F):
    """argmax_beta |lambda^beta F[alpha][beta]|, ties resolved toward the
    earlier index in canonical order (space is canonically sorted)."""
    phi = {}
    for a in A_members:
        best, best_v = None, -1.0
        for b in space:
            v = abs(F[a][b]) * math.prod(l**e for l, e in zip(lambdas, b))
            if v > best_v + 1e-15:
                best, best_v = b, v
        phi[a] = best
    return phi


def rescale(F: dict, a: float, C: float, m: int, n: int) -> RescalingResult:
    """Search lambda_i in {2^-j : 0 <= j <= J_MAX}^n, enumerated by increasing
    total exponent then lexicographically, for the first point where
    phi(alpha) = argmax_beta |lambda^beta F[alpha][beta]| satisfies: phi(alpha)
    <= alpha in index order, phi(alpha) in A only if equal, and every other
    column is dominated by a factor a (pb24).  F maps alpha -> {beta: value}."""
    A_members = sorted(F, key=idx_sort_key)
    space = multiindices(n, m - 1)
    if not A_members:
        return RescalingResult((1.0,) * n, {}, a, 1.0)
    for al in A_members:
        if F[al][al] == 0:
            raise PreconditionError(f"diagonal entry F[{al}][{al}] vanishes")
        for b in space:
            if _ge_componentwise(b, al) and abs(F[al][b]) > C * abs(F[al][al]) * (1 + 1e-12):
                raise PreconditionError(f"row bound |F| <= C|F_diag| fails at {al},{b}")
        for b in A_members:
            if b != al and abs(F[al][b]) > KRONECKER_TOL * max(1.0, abs(F[al][al])):
                raise PreconditionError(f"off-diagonal F[{al}][{b}] nonzero inside A")
    F = {al: {b: (0.0 if (b in A_members and b != al) else F[al][b]) for b in space} for al in A_members}

    order_A = {al: i for i, al in enumerate(sorted(space, key=idx_sort_key))}
    best_violation = None

    def violation(lambdas, phi):
        worst = 0.0
        for al in A_members:
            p = phi[al]
            if order_A[p] > order_A[al]:
                return math.inf
            if p != al and p in A_members:
                return math.inf
            top = abs(F[al][p]) * math.prod(l**e for l, e in zip(lambdas, p))
            for b in space:
                if b == p:
                    continue
                v = abs(F[al][b]) * math.prod(l**e for l, e in zip(lambdas, b))
                worst = max(worst, v - a * top)
        return worst

    for total in range(n * J_MAX + 1):
        for js in _compositions(total, n, J_MAX):
            lambdas = tuple(2.0**-j for j in js)
            phi = _phi_of(lambdas, A_members, space, F)
            viol = violation(lambdas, phi)
            if viol <= 0.0:
                return RescalingResult(lambdas, phi, a, min(lambdas))
            if best_violation is None or viol < best_violation[0]:
                best_violation = (viol, lambdas)
    raise RescalingError(
        f"no grid point within J_MAX={J_MAX} satisfies the domination condition",
        best_violation,
    )


def _compositions(total, n, cap):
    """All j-vectors of length n with given sum and entries <= cap, lexicographic."""
    if n == 1:
        if total <= cap:
            yield (total,)
        return
    for first in range(min(total, cap) + 1):
        for rest in _compositions(total - first, n - 1, cap):
            yield (first,) + rest


# ---------------------------------------------------------------------------
# relabeling


def _scaled_deriv_matrix(cert: BasisCertificate):
    """F[alpha][beta] = delta^(|beta|-|alpha|) d^beta P_alpha(x0)."""
    space = multiindices(cert.n, cert.m - 1)
    return {
        a: {b: cert.delta ** (sum(b) - sum(a)) * float(P.deriv(b)) for b in space}
        for a, P in cert.vectors.items()
    }


def relabel(cert: BasisCertificate, field: ShapeField, a: float | None = None) -> BasisCertificate:
    """Weak certificate -> full certificate on a monotonic A_hat <= A.

    Chain: rescale the scaled derivative matrix; normalize the dominant
    entries (b_abar); close A_bar = phi(A) under addition into A_hat; multiply
    by rescaled monomials S_ahat; invert the resulting near-identity matrix;
    assemble P_gamma and re-verify everything through check_basis.  The
    smallness parameter backtracks over a descending grid when the linear
    solve drifts too far from the identity."""
    x0, M0, delta, m, n = cert.x0, cert.M0, cert.delta, cert.m, cert.n
    space = multiindices(n, m - 1)
    if len(cert.A) == 0:
        CB = measure_C_B([], {}, cert.P0, delta, M0, field, x0)
        if CB is None:
            raise RelabelError("base jet is not a member at any grid constant", stage="empty-A")
        return BasisCertificate(
            IndexSet.empty(m, n), delta, CB, x0, M0, cert.P0, {}, weak=False,
            meta={"strict_drop": False, "stage": "empty-A"},
        )

    F = _scaled_deriv_matrix(cert)
    max_scaled = max(abs(v) for row in F.values() for v in row.values())
    grid = A_GRID if a is None else (a,)
    last_err = None
    for a_try in grid:
        try:
            return _relabel_at(cert, field, F, a_try, max_scaled)
        except (RescalingError, RelabelError, np.linalg.LinAlgError) as e:
            last_err = e
    raise RelabelError(f"all smallness parameters failed; last: {last_err}", stage="backtracking")


def _relabel_at(cert, field, F, a, max_scaled):
    x0, M0, delta, m, n = cert.x0, cert.M0, cert.delta, cert.m, cert.n
    space = multiindices(n, m - 1)
    res = rescale(F, a, max(1.0, max_scaled), m, n)
    lam = res.lambdas

    A_bar = sorted({res.phi[al] for al in cert.A.members}, key=idx_sort_key)
    psi = {}
    for ab in A_bar:
        psi[ab] = next(al for al in sorted(cert.A.members, key=idx_sort_key) if res.phi[al] == ab)

    # dominant-entry normalization: derivative of P_psi after rescaling
    b_bar, P_bar = {}, {}
    for ab in A_bar:
        al = psi[ab]
        scaled = delta ** (sum(ab) - sum(al)) * res.lam_pow(ab) * float(cert.vectors[al].deriv(ab))
        if scaled == 0:
            raise RelabelError(f"dominant entry vanished at {ab}", stage="normalize")
        b_bar[ab] = 1.0 / scaled
        P_bar[ab] = cert.vectors[al] * (b_bar[ab] * delta ** (sum(ab) - sum(al)))

    A_hat = sorted(
        {
            tuple(ab_i + g_i for ab_i, g_i in zip(ab, g))
            for ab in A_bar
            for g in space
            if sum(ab) + sum(g) <= m - 1
        },
        key=idx_sort_key,
    )
    chi, omega = {}, {}
    for ah in A_hat:
        for ab in A_bar:
            if _ge_componentwise(ah, ab):
                chi[ah] = ab
                omega[ah] = tuple(h - b for h, b in zip(ah, ab))
                break

    # jet products with the rescaled monomials
    G = {}
    for ah in A_hat:
        coeff = factorial_mi(chi[ah]) / factorial_mi(ah) / res.lam_pow(omega[ah])
        S = Jet.monomial(x0, m - 1, omega[ah], coeff)
        G[ah] = jet_multiply(S, P_bar[chi[ah]])

    # near-identity system in the rescaled coordinates
    k = len(A_hat)
    N = np.zeros((k, k))
    for j, ah in enumerate(A_hat):
        for i, b in enumerate(A_hat):
            N[i, j] = delta ** (sum(b) - sum(ah)) * res.lam_pow(b) * float(G[ah].deriv(b))
    dev = np.max(np.abs(N - np.eye(k)))
    # Kronecker at x0 needs sum_j b[gam,j] N[i,j] = delta_{gam,i}, i.e. b = N^{-T}
    bmat = np.linalg.inv(N).T
    if np.max(np.abs(bmat)) > 2.0 + 1e-9:
        raise RelabelError(f"solve coefficients exceed 2 (identity deviation {dev:.3g})", stage="solve")

    vectors = {}
    for g_i, gam in enumerate(A_hat):
        acc = None
        for j, ah in enumerate(A_hat):
            term = G[ah] * (bmat[g_i, j] * delta ** (sum(gam) - sum(ah)))
            acc = term if acc is None else acc + term
        vectors[gam] = acc * res.lam_pow(gam)

    A_hat_set = IndexSet.of(m, n, A_hat)
    if not is_monotonic(A_hat_set):
        raise RelabelError("closure produced a non-monotonic set", stage="closure")
    CB = measure_C_B(A_hat, vectors, cert.P0, delta, M0, field, x0)
    if CB is None:
        raise RelabelError("no grid constant certifies the new basis", stage="measure")
    threshold = a * res.c_of_a ** -(m - 1)
    out = BasisCertificate(
        A_hat_set, delta, CB, x0, M0, cert.P0, vectors, weak=False,
        meta={
            "a_used": a,
            "lambdas": list(res.lambdas),
            "phi": {str(k_): list(v) for k_, v in res.phi.items()},
            "A_bar": [list(v) for v in A_bar],
            "strict_drop": set_compare(A_hat_set, cert.A) < 0,
            "max_scaled_entry": max_scaled,
            "identity_threshold": threshold,
            "threshold_exceeded": max_scaled > threshold,
            "solve_deviation": float(dev),
        },
    )
    rep = check_basis(out, field)
    if not rep["ok"]:
        raise RelabelError(f"verification failed: {rep}", stage="verify")
    out.meta["check"] = rep
    return out


# ---------------------------------------------------------------------------
# shrinking the index set with an escaping jet


def control_gamma_step(cert: BasisCertificate, P: Jet, field: ShapeField):
    """Given a full basis at (x0, M0, P0) and a jet P agreeing with P0 on A
    but escaping by at least M0 delta^m in scaled norm, produce a strictly
    smaller monotonic index set with a basis at the recentered midpoint.
    Returns (A_hat, P_hat0, cert')."""
    if cert.weak:
        raise PreconditionError("control step needs a full basis certificate")
    x0, M0, delta, m, n = cert.x0, cert.M0, cert.delta, cert.m, cert.n
    space = multiindices(n, m - 1)
    if not field.member(x0, cert.C_B * M0, P, tol=1e-7):
        raise PreconditionError("P is not a member at scale C_B M0")
    D = P - cert.P0
    for b in cert.A.members:
        if abs(D.deriv(b)) > KRONECKER_TOL:
            raise PreconditionError(f"P - P0 has nonzero derivative {b} inside A")
    scaled = {b: delta ** sum(b) * abs(D.deriv(b)) for b in space}
    peak = max(scaled.values())
    if peak < M0 * delta**m * (1 - 1e-12):
        raise PreconditionError("P lies too close to P0 (escape threshold not met)")

    # shrink toward P0 until the peak sits exactly at the threshold
    t = M0 * delta**m / peak
    D = D * t
    P = cert.P0 + D
    gamma = next(b for b in space if scaled[b] == peak)
    assert gamma not in cert.A  # D vanishes on A while the peak is positive

    P_hat0 = (cert.P0 + P) * 0.5
    Pg = D * (1.0 / D.deriv(gamma))
    vectors = {gamma: Pg}
    for al, Pa in cert.vectors.items():
        vectors[al] = Pa - Pg * float(Pa.deriv(gamma))
    A_ext = cert.A.add(gamma)
    assert set_compare(A_ext, cert.A) < 0  # adding a fresh index strictly lowers the set order

    CB1 = measure_C_B(sorted(A_ext.members, key=idx_sort_key), vectors, P_hat0, delta, M0, field, x0)
    if CB1 is None:
        raise RelabelError("no grid constant certifies the extended basis", stage="extend")
    cert1 = BasisCertificate(A_ext, delta, CB1, x0, M0, P_hat0, vectors, weak=False)
    out = relabel(cert1, field)
    conclusions = {
        "monotonic": is_monotonic(out.A),
        "strict_drop": set_compare(out.A, cert.A) < 0,
        "basis_ok": out.meta.get("check", {}).get("ok", False),
        "agree_on_A": all(abs((P_hat0 - cert.P0).deriv(b)) <= KRONECKER_TOL for b in cert.A.members),
        "recenter_bound": max(
            abs((P_hat0 - cert.P0).deriv(b)) / (M0 * delta ** (m - sum(b))) for b in space
        ),
    }
    if not (
        conclusions["monotonic"]
        and conclusions["strict_drop"]
        and conclusions["basis_ok"]
        and conclusions["agree_on_A"]
        and conclusions["recenter_bound"] <= 1 + 1e-9
    ):
        raise RelabelError(f"control step conclusions failed: {conclusions}", stage="conclusions")
    out.meta["control_conclusions"] = conclusions
    out.meta["gamma"] = list(gamma)
    return out.A, P_hat0, out


# ---------------------------------------------------------------------------
# transport to a nearby point


def refinement_accessor(field_prev: ShapeField, x0, y0):
    """Callable (R: jet at x0, M) -> jet at y0 in Gamma_prev(y0, M) within the
    Taylor bound at x0, re-based at x0; None if infeasible."""
    x0 = tuple(float(v) for v in x0)
    y0 = tuple(float(v) for v in y0)

    def access(R: Jet, M: float):
        W = partner_witness(field_prev, y0, M, x0, R)
        if W is None:
            return None
        return taylor_transport(W, x0)

    return access


def transport(
    certA: BasisCertificate,
    certAhat: BasisCertificate,
    y0,
    accessor,
    field_prev: ShapeField,
    eps0: float = 1e-3,
) -> dict:
    """Move both bases from x0 (over the l-th refinement) to y0 (over the
    (l-1)-th): transport the two-sided perturbations through the accessor,
    average, correct along A to restore agreement with P0, and re-normalize
    both direction families at y0.  Returns P_hat_sharp, the two verified
    certificates at y0, and the measured conclusion constants."""
    if not is_monotonic(certA.A):
        raise PreconditionError("index set A must be monotonic")
    if certA.x0 != certAhat.x0 or certA.M0 != certAhat.M0 or certA.delta != certAhat.delta:
        raise PreconditionError("certificates must share (x0, M0, delta)")
    if set_compare(certAhat.A, certA.A) > 0:
        raise PreconditionError("second index set must not exceed the first in set order")
    x0, M0, delta, m, n = certA.x0, certA.M0, certA.delta, certA.m, certA.n
    y0 = tuple(float(v) for v in y0)
    space = multiindices(n, m - 1)
    P0, Ph0 = certA.P0, certAhat.P0
    diff = P0 - Ph0
    for b in certA.A.members:
        if abs(diff.deriv(b)) > KRONECKER_TOL:
            raise PreconditionError("P0 and P_hat0 must agree on A")
    C_DIFF = max(
        (abs(diff.deriv(b)) / (M0 * delta ** (m - sum(b))) for b in space), default=0.0
    )
    r = float(np.linalg.norm(np.array(x0) - np.array(y0)))
    if r > eps0 * delta * (1 + 1e-12):
        raise PreconditionError(f"|x0-y0| = {r} exceeds eps0*delta = {eps0 * delta}")

    A_list = sorted(certA.A.members, key=idx_sort_key)
    Ah_list = sorted(certAhat.A.members, key=idx_sort_key)

    if not A_list and not Ah_list:
        scale = certA.C_B * M0
        W = accessor(P0, scale)
        if W is None:
            raise TransportError("no refinement witness for P0")
        return _transport_finish(
            W, {}, {}, certA, certAhat, y0, field_prev, P0, delta, M0, space, m, r
        )

    c0 = 1.0 / certA.C_B
    ch0 = 1.0 / certAhat.C_B

    def transported_pair(base, vec, c, CB, sum_a):
        out = {}
        for s in (1.0, -1.0):
            coeff = c * s * M0 * delta ** (m - sum_a)
            R = base + vec * coeff
            W = accessor(R, CB * M0)
            if W is None:
                raise TransportError("refinement witness missing for a perturbed jet")
            out[s] = (R, W, coeff)
        return out

    Es, Ehs = {}, {}
    transported = []
    for al in A_list:
        pair = transported_pair(P0, certA.vectors[al], c0, certA.C_B, sum(al))
        for s, (R, W, coeff) in pair.items():
            Es[(al, s)] = (W - R) * (1.0 / coeff)
            transported.append(W)
    for al in Ah_list:
        pair = transported_pair(Ph0, certAhat.vectors[al], ch0, certAhat.C_B, sum(al))
        for s, (R, W, coeff) in pair.items():
            Ehs[(al, s)] = (W - R) * (1.0 / coeff)
            transported.append(W)

    P_prime = transported[0] * 0.0
    for W in transported:
        P_prime = P_prime + W
    P_prime = P_prime * (1.0 / len(transported))

    Pp = {al: certA.vectors[al] + (Es[(al, 1.0)] + Es[(al, -1.0)]) * 0.5 for al in A_list}
    Php = {al: certAhat.vectors[al] + (Ehs[(al, 1.0)] + Ehs[(al, -1.0)]) * 0.5 for al in Ah_list}

    if A_list:
        k = len(A_list)
        Amat = np.zeros((k, k))
        rhs = np.zeros(k)
        for i, b in enumerate(A_list):
            for j, al in enumerate(A_list):
                Amat[i, j] = delta ** (sum(b) - sum(al)) * float(Pp[al].deriv(b))
            rhs[i] = -(delta ** (sum(b) - m)) / M0 * float((P_prime - P0).deriv(b))
        cond = float(np.linalg.cond(Amat))
        if cond > 1e8:
            raise TransportError(f"correction system is near-singular (cond {cond:.3g}); shrink eps0")
        s_sharp = np.linalg.solve(Amat, rhs)
        P_sharp = P_prime
        for sv, al in zip(s_sharp, A_list):
            P_sharp = P_sharp + Pp[al] * (float(sv) * M0 * delta ** (m - sum(al)))
        solve_info = {"cond": cond, "s_sharp_max": float(np.max(np.abs(s_sharp)))}
    else:
        P_sharp = P_prime
        solve_info = {"cond": 1.0, "s_sharp_max": 0.0}

    return _transport_finish(
        P_sharp, Pp, Php, certA, certAhat, y0, field_prev, P0, delta, M0, space, m, r, solve_info
    )


def _renormalized_at(y0, delta, fam, names):
    """New directions with exact Kronecker at y0: invert the scaled
    derivative matrix of the transported family."""
    if not names:
        return {}
    k = len(names)
    N = np.zeros((k, k))
    for j, al in enumerate(names):
        for i, b in enumerate(names):
            N[i, j] = delta ** (sum(b) - sum(al)) * float(taylor_transport(fam[al], y0).deriv(b))
    bmat = np.linalg.inv(N).T
    out = {}
    for gi, gam in enumerate(names):
        acc = None
        for j, al in enumerate(names):
            term = fam[al] * (bmat[gi, j] * delta ** (sum(gam) - sum(al)))
            acc = term if acc is None else acc + term
        out[gam] = taylor_transport(acc, y0)
    return out


def _transport_finish(
    P_sharp, Pp, Php, certA, certAhat, y0, field_prev, P0, delta, M0, space, m, r, solve_info=None
):
    A_list = sorted(certA.A.members, key=idx_sort_key)
    Ah_list = sorted(certAhat.A.members, key=idx_sort_key)
    x0 = certA.x0
    newA = _renormalized_at(y0, delta, Pp, A_list)
    newAh = _renormalized_at(y0, delta, Php, Ah_list)
    P_sharp_y = taylor_transport(P_sharp, y0)

    CB_A = measure_C_B(A_list, newA, P_sharp_y, delta, M0, field_prev, y0)
    CB_Ah = measure_C_B(Ah_list, newAh, P_sharp_y, delta, M0, field_prev, y0)
    if CB_A is None or CB_Ah is None:
        raise TransportError("transported basis admits no grid constant")
    outA = BasisCertificate(certA.A, delta, CB_A, y0, M0, P_sharp_y, newA, weak=False)
    outAh = BasisCertificate(certAhat.A, delta, CB_Ah, y0, M0, P_sharp_y, newAh, weak=False)
    repA = check_basis(outA, field_prev)
    repAh = check_basis(outAh, field_prev)

    agree = max((abs((P_sharp - P0).deriv(b)) for b in certA.A.members), default=0.0)
    diff_const = max(
        (abs((P_sharp - P0).deriv(b)) / (M0 * delta ** (m - sum(b))) for b in space), default=0.0
    )
    conclusions = {
        "basis_A_ok": repA["ok"],
        "basis_Ahat_ok": repAh["ok"],
        "agreement_on_A": agree,
        "agreement_pass": agree <= KRONECKER_TOL,
        "measured_C_prime": diff_const,
        "C_B_A": CB_A,
        "C_B_Ahat": CB_Ah,
        "distance": r,
    }
    if solve_info:
        conclusions.update(solve_info)
    if not (repA["ok"] and repAh["ok"] and conclusions["agreement_pass"]):
        raise TransportError(f"transport conclusions failed: {conclusions}")
    return {
        "P_sharp": P_sharp_y,
        "cert_A": outA,
        "cert_Ahat": outAh,
        "conclusions": conclusions,
    }


# ---------------------------------------------------------------------------
# utilities


def l_of_A(A: IndexSet) -> int:
    """1 + 3 * #(monotonic sets strictly below A); a reporting utility."""
    return 1 + 3 * sum(1 for S in monotonic_sets(A.m, A.n) if set_compare(S, A) < 0)


def cert_to_json(cert: BasisCertificate) -> str:
    from .jet_core import jet_to_json

    return json.dumps(
        {
            "A": sorted([list(a) for a in cert.A.members]),
            "m": cert.m,
            "n": cert.n,
            "delta": cert.delta,
            "C_B": cert.C_B,
            "x0": list(cert.x0),
            "M0": cert.M0,
            "P0": jet_to_json(cert.P0),
            "vectors": {",".join(map(str, a)): jet_to_json(P) for a, P in sorted(cert.vectors.items())},
            "weak": cert.weak,
        },
        sort_keys=True,
    )


def cert_from_json(text: str) -> BasisCertificate:
    from .jet_core import jet_from_json

    d = json.loads(text)
    return BasisCertificate(
        IndexSet.of(d["m"], d["n"], [tuple(a) for a in d["A"]]),
        d["delta"],
        d["C_B"],
        tuple(d["x0"]),
        d["M0"],
        jet_from_json(d["P0"]),
        {tuple(int(v) for v in k.split(",")): jet_from_json(j) for k, j in d["vectors"].items()},
        weak=d["weak"],
    )
