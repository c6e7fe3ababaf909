"""Scratch smoke checks for basis_machinery (deleted before commit)."""
import json

from whitsel.jet_core import GlobalConfig, IndexSet, Jet, set_compare
from whitsel.polytope import box_rows, HPolytope
from whitsel.shape_field import make_custom_field, make_interp_field
from whitsel.basis_machinery import (
    BasisCertificate, PreconditionError, RelabelError, TransportError,
    check_basis, cert_from_json, cert_to_json, control_gamma_step, l_of_A,
    measure_C_B, refinement_accessor, relabel, rescale, transport,
)

frozen = json.load(open("tests/oracles/frozen.json"))

# 1. rescale frozen example: F[(0,)] = {(0,):1, (1,):10}, a=0.1 -> lambda=2^-7
F = {(0,): {(0,): 1.0, (1,): 10.0}}
res = rescale(F, 0.1, 10.0, m=2, n=1)
print("rescale lambda:", res.lambdas, "phi:", res.phi)
assert abs(res.lambdas[0] - frozen["basis"]["rescale_lambda"]) < 1e-15, res.lambdas
assert res.lambdas[0] == 2.0 ** -frozen["basis"]["rescale_j"]
assert res.phi[(0,)] == (0,)

# diagonal F -> lambda = 1
F2 = {(0,): {(0,): 1.0, (1,): 0.0}, (1,): {(0,): 0.0, (1,): 1.0}}
res2 = rescale(F2, 0.25, 1.0, m=2, n=1)
assert res2.lambdas == (1.0,), res2.lambdas
assert res2.phi == {(0,): (0,), (1,): (1,)}
print("diagonal rescale ok")

# 2. full-basis identity path on a pinned interp field
cfg = GlobalConfig(m=2, n=1)
field = make_interp_field(((0.0,), (1.0,)), (0.0, 0.0), m=2)
x0 = (0.0,)
P0 = Jet.zeros(x0, 1)
PA = Jet(x0, 1, (0.0, 1.0))
A = IndexSet.of(2, 1, [(1,)])
CB = measure_C_B([(1,)], {(1,): PA}, P0, 1.0, 1.0, field, x0)
print("measured C_B on interp field:", CB)
assert CB == 1.0
cert = BasisCertificate(A, 1.0, CB, x0, 1.0, P0, {(1,): PA}, weak=True)
rep = check_basis(cert, field)
assert rep["ok"], rep
out = relabel(cert, field)
print("relabel identity: A_hat =", out.A.members, "C_B =", out.C_B,
      "strict_drop =", out.meta["strict_drop"])
assert out.A.members == ((1,),)
assert not out.meta["strict_drop"]
assert abs(out.vectors[(1,)].deriv((1,)) - 1.0) < 1e-12

# JSON round trip
back = cert_from_json(cert_to_json(out))
assert back.A.members == out.A.members and back.C_B == out.C_B
assert tuple(back.vectors[(1,)].derivs) == tuple(out.vectors[(1,)].derivs)
print("json round trip ok")

# 3. strict drop: huge zero-order entry on an unpinned box field
box = make_custom_field(cfg, {(0.0,): HPolytope.from_rows(2, box_rows(2))}, degree=1)
K = 1000.0
PA_big = Jet(x0, 1, (K, 1.0))
CBw = measure_C_B([(1,)], {(1,): PA_big}, P0, 1.0, 1.0, box, x0, weak=True)
print("weak C_B for huge entry:", CBw)
assert CBw == 32.0, CBw
wcert = BasisCertificate(A, 1.0, CBw, x0, 1.0, P0, {(1,): PA_big}, weak=True)
assert check_basis(wcert, box)["ok"]
out2 = relabel(wcert, box)
print("relabel drop: A_hat =", out2.A.members, "strict_drop =", out2.meta["strict_drop"],
      "threshold_exceeded =", out2.meta["threshold_exceeded"], "C_B =", out2.C_B)
assert out2.A.members == ((0,), (1,))
assert out2.meta["strict_drop"] and out2.meta["threshold_exceeded"]
assert set_compare(out2.A, A) < 0

# 4. control step
fcert = BasisCertificate(A, 1.0, 1.0, x0, 1.0, P0, {(1,): Jet(x0, 1, (0.0, 1.0))})
assert check_basis(fcert, box)["ok"]
P_escape = Jet(x0, 1, (1.0, 0.0))
A_hat, P_hat0, cert2 = control_gamma_step(fcert, P_escape, box)
print("control step: A_hat =", A_hat.members, "P_hat0 =", P_hat0.derivs,
      "conclusions =", cert2.meta["control_conclusions"])
assert set_compare(A_hat, A) < 0
assert tuple(P_hat0.derivs) == (0.5, 0.0)

# error: too close
try:
    control_gamma_step(fcert, Jet(x0, 1, (0.5, 0.0)), box)
    raise SystemExit("expected PreconditionError")
except PreconditionError as e:
    print("too-close error ok:", e)

# error: A = M forces P = P0
full_vecs = {(0,): Jet(x0, 1, (1.0, 0.0)), (1,): Jet(x0, 1, (0.0, 1.0))}
fullcert = BasisCertificate(IndexSet.full(2, 1), 1.0, 1.0, x0, 1.0, P0, full_vecs)
try:
    control_gamma_step(fullcert, Jet(x0, 1, (0.0, 0.5)), box)
    raise SystemExit("expected PreconditionError for full A")
except PreconditionError as e:
    print("full-A error ok:", e)

# 5. transport, y0 = x0, A_hat = A, P_hat0 = P0: exact zero error
acc = refinement_accessor(box, x0, x0)
res_t = transport(fcert, fcert, x0, acc, box)
print("self transport: P_sharp =", res_t["P_sharp"].derivs, res_t["conclusions"])
assert max(abs(v) for v in res_t["P_sharp"].derivs) <= 1e-9
assert res_t["conclusions"]["measured_C_prime"] <= 1e-9

# transport A-cert with the control-step A_hat-cert, still y0 = x0
res_t2 = transport(fcert, cert2, x0, acc, box)
print("mixed transport: P_sharp =", res_t2["P_sharp"].derivs)
assert abs(res_t2["P_sharp"].deriv((1,))) <= 1e-9  # agreement on A

# trivial empty-empty
e_cert = BasisCertificate(IndexSet.empty(2, 1), 1.0, 1.0, x0, 1.0, P0, {})
res_t3 = transport(e_cert, e_cert, x0, acc, box)
assert max(abs(v) for v in res_t3["P_sharp"].derivs) <= 1e-12

# transport to a genuinely different y0 over a level-0 box field
y0 = (0.0005,)
box2 = make_custom_field(cfg, {x0: HPolytope.from_rows(2, box_rows(2)),
                               y0: HPolytope.from_rows(2, box_rows(2))}, degree=1)
fcert_b = BasisCertificate(A, 1.0, 1.0, x0, 1.0, P0, {(1,): Jet(x0, 1, (0.0, 1.0))})
acc2 = refinement_accessor(box2, x0, y0)
res_t4 = transport(fcert_b, fcert_b, y0, acc2, box2)
print("moved transport:", res_t4["P_sharp"].basepoint, res_t4["P_sharp"].derivs,
      res_t4["conclusions"])
assert res_t4["P_sharp"].basepoint == y0
assert res_t4["conclusions"]["agreement_pass"]

# 6. delta' rescale property
import math
for dprime in (0.25, 0.5, 2.0, 4.0):
    c2 = BasisCertificate(A, dprime, 1.0 * max(dprime, 1 / dprime) ** 2, x0, 1.0, P0,
                          {(1,): Jet(x0, 1, (0.0, 1.0))})
    r = check_basis(c2, box)
    assert r["ok"], (dprime, r)
print("delta-rescale property ok")

# 7. l_of_A
print("l(full) =", l_of_A(IndexSet.full(2, 1)), "l(empty) =", l_of_A(IndexSet.empty(2, 1)))
assert l_of_A(IndexSet.full(2, 1)) == 1  # minimal set has no predecessors

print("ALL BASIS SMOKE CHECKS PASSED")
