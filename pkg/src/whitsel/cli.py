"""Command-line front end: instance files in, reproducible reports out.

Reports are deterministic for a fixed (instance, seed, arithmetic) triple:
keys sorted, no timestamps, no worker counts.  Wall-clock numbers go to a
timing.json sidecar instead.  Grid CSVs use the C locale (plain repr floats).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .basis_machinery import BasisCertificate, check_basis, measure_C_B, relabel
from .cz_whitney import DyadicCube, cz_decompose, ok_simple, region_for
from .jet_core import GlobalConfig, IndexSet, Jet, multiindices
from .polytope import GuardExceeded, HPolytope, InfeasibleError, feasible
from .shape_field import ConvexityParams, convexity_check, refine
from .selection_solver import (
    SUBSET_SCAN_GUARD,
    PointConstraint,
    SelectionInstance,
    finiteness_scan,
    gamma_fp_scan,
    lift_instance,
    solve_global,
)

__all__ = ["main", "load_instance", "SchemaError"]


class SchemaError(ValueError):
    pass


# ---------------------------------------------------------------------------
# instance files


def _reject_unknown(doc: dict, allowed, where: str):
    if not isinstance(doc, dict):
        raise SchemaError(f"{where} must be an object")
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise SchemaError(f"unknown keys {unknown} in {where}")


def _parse_polytope(doc, D: int, where: str) -> HPolytope:
    _reject_unknown(doc, ("rows", "box"), where)
    rows = []
    for lohi in doc.get("box", []):
        if len(lohi) != 2:
            raise SchemaError(f"{where}.box entries are [lo, hi] pairs")
    box = doc.get("box")
    if box is not None:
        if len(box) != D:
            raise SchemaError(f"{where}.box needs {D} pairs")
        for d, (lo, hi) in enumerate(box):
            e = [0.0] * D
            e[d] = 1.0
            rows.append((tuple(e), float(hi), 0.0))
            rows.append((tuple(-v for v in e), -float(lo), 0.0))
    for i, r in enumerate(doc.get("rows", [])):
        _reject_unknown(r, ("a", "b"), f"{where}.rows[{i}]")
        a = [float(v) for v in r["a"]]
        if len(a) != D:
            raise SchemaError(f"{where}.rows[{i}].a needs {D} entries")
        rows.append((tuple(a), float(r["b"]), 0.0))
    if not rows:
        raise SchemaError(f"{where} needs rows or box")
    return HPolytope.from_rows(D, rows)


def _parse_constraint(doc, D: int, where: str) -> PointConstraint:
    _reject_unknown(doc, ("kind", "payload"), where)
    if "payload" not in doc:
        raise SchemaError(f"{where} needs a payload")
    kind = doc.get("kind")
    if kind == "equality":
        p = doc["payload"]
        vals = (float(p),) if isinstance(p, (int, float)) else tuple(float(v) for v in p)
        return PointConstraint("equality", vals if len(vals) > 1 else vals[0])
    if kind == "nonneg":
        return PointConstraint("nonneg", float(doc["payload"]))
    if kind == "convex":
        return PointConstraint("convex", _parse_polytope(doc["payload"], D, f"{where}.payload"))
    raise SchemaError(f"unknown constraint kind {kind!r} in {where}")


class Options:
    def __init__(self, doc: dict):
        _reject_unknown(
            doc, ("k_max", "l_max", "grids", "seeds", "arithmetic", "guards"), "options"
        )
        self.k_max = doc.get("k_max")
        self.l_max = int(doc.get("l_max", 1))
        self.grids = int(doc.get("grids", 40))
        seeds = doc.get("seeds", 0)
        self.seed = int(seeds[0] if isinstance(seeds, list) else seeds)
        self.arithmetic = doc.get("arithmetic", "float")
        if self.arithmetic not in ("float", "exact"):
            raise SchemaError("options.arithmetic must be 'float' or 'exact'")
        guards = doc.get("guards", {})
        _reject_unknown(guards, ("subsets", "M_cap"), "options.guards")
        self.guard_subsets = int(guards.get("subsets", SUBSET_SCAN_GUARD))
        self.M_cap = guards.get("M_cap")
        if self.M_cap is not None:
            self.M_cap = float(self.M_cap)


def load_instance(path: str):
    """(instance, options, sha256 of the file bytes)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    sha = hashlib.sha256(raw).hexdigest()
    doc = json.loads(raw.decode("utf-8"))
    _reject_unknown(doc, ("config", "points", "options"), "instance")
    cfg_doc = doc.get("config", {})
    _reject_unknown(cfg_doc, ("m", "n", "D", "flavor"), "config")
    if "m" not in cfg_doc or "n" not in cfg_doc:
        raise SchemaError("config needs m and n")
    config = GlobalConfig(int(cfg_doc["m"]), int(cfg_doc["n"]), int(cfg_doc.get("D", 1)))
    flavor = cfg_doc.get("flavor", "Cm11")
    pts_doc = doc.get("points")
    if not pts_doc:
        raise SchemaError("instance needs a nonempty points list")
    E, cons = [], []
    for i, pd in enumerate(pts_doc):
        _reject_unknown(pd, ("x", "constraint"), f"points[{i}]")
        E.append(tuple(float(v) for v in pd["x"]))
        cons.append(_parse_constraint(pd["constraint"], config.D, f"points[{i}].constraint"))
    try:
        inst = SelectionInstance(config, E, cons, flavor)
    except (ValueError, TypeError) as e:
        raise SchemaError(str(e)) from e
    return inst, Options(doc.get("options", {})), sha


# ---------------------------------------------------------------------------
# report plumbing


def _fmt_point(x) -> str:
    return ",".join(repr(float(v)) for v in x)


def _write_json(outdir: str, name: str, payload: dict) -> str:
    path = os.path.join(outdir, name)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(payload, sort_keys=True, indent=2))
        fh.write("\n")
    return path


def _base_report(args, sha: str, opts: Options) -> dict:
    return {
        "version": __version__,
        "instance_sha256": sha,
        "seed": args.seed if args.seed is not None else opts.seed,
        "arithmetic": "exact" if (args.exact or opts.arithmetic == "exact") else "float",
    }


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("WHITSEL_THREADS", "1")))
    except ValueError:
        return 1


def _grid_csv(path: str, F, region, ticks: int, D: int):
    lo, hi = region
    axes = [np.linspace(l, h, ticks) for l, h in zip(lo, hi)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        head = [f"x_{i+1}" for i in range(len(lo))]
        w.writerow(head + (["F"] if D == 1 else [f"F_{d+1}" for d in range(D)]))
        for pt in itertools.product(*axes):
            val = F(pt)
            w.writerow([repr(float(v)) for v in pt]
                       + [repr(float(t)) for t in (np.atleast_1d(val))])


# ---------------------------------------------------------------------------
# commands


def cmd_solve(args) -> int:
    inst, opts, sha = load_instance(args.instance)
    exact = args.exact or opts.arithmetic == "exact"
    os.makedirs(args.out, exist_ok=True)
    t0 = time.perf_counter()
    try:
        M, F, diag = solve_global(
            inst, exact=exact, grid_samples=opts.grids, M_cap=opts.M_cap
        )
    except InfeasibleError as e:
        report = _base_report(args, sha, opts)
        report.update({"command": "solve", "status": "infeasible", "detail": str(e)})
        _write_json(args.out, "report.json", report)
        print(f"infeasible: {e}", file=sys.stderr)
        return 2
    report = _base_report(args, sha, opts)
    report.update(
        {
            "command": "solve",
            "status": "ok",
            "M_star": M,
            "measured_norm": diag["measured_norm"],
            "norm_ratio": diag["norm_ratio"],
            "grid_min": diag["grid_min"],
            "worst_equality_residual": diag["worst_equality_residual"],
            "worst_target_slack": diag["worst_target_slack"],
            "residuals": {_fmt_point(x): r for x, r in diag["residuals"].items()},
        }
    )
    if "euclid_factor" in diag:
        report["euclid_factor"] = diag["euclid_factor"]
    _write_json(args.out, "report.json", report)
    _write_json(
        args.out,
        "timing.json",
        {"solve_s": time.perf_counter() - t0, "glue_s": diag["build_s"]},
    )
    if args.grid:
        region = (F.components[0] if inst.is_vector else F).tree.region
        _grid_csv(os.path.join(args.out, "grid.csv"), F, region, args.grid, inst.config.D)
    print(f"M* = {M}")
    return 0


def cmd_finiteness(args) -> int:
    inst, opts, sha = load_instance(args.instance)
    exact = args.exact or opts.arithmetic == "exact"
    os.makedirs(args.out, exist_ok=True)
    dimP = inst.config.dimP
    k = args.k or opts.k_max or min(dimP + 2, len(inst.E))
    guard = args.guard_subsets or opts.guard_subsets
    t0 = time.perf_counter()
    rep = finiteness_scan(inst, k, exact=exact, guard_subsets=guard, workers=_workers())
    report = _base_report(args, sha, opts)
    report.update({"command": "finiteness", "k": k, "report": rep.to_json()})
    gamma = None
    if not inst.is_vector and not inst.is_nonneg:
        l_max = args.l if args.l is not None else opts.l_max
        M0 = rep.M_global
        tables = []
        for x in sorted(inst.E):
            table = gamma_fp_scan(
                inst,
                x,
                M0,
                l_max,
                exact=exact or args.helly,
                helly=args.helly,
                subset_cap=None,
            )
            tables.append({"x": list(x), "M0": M0, "table": table})
        gamma = {"l_max": l_max, "tables": tables}
        if args.helly:
            gamma["helly_cross_check"] = {
                "agree": all(
                    e["helly"]["agree"]
                    for t in tables
                    for e in t["table"]
                    if "helly" in e
                )
            }
    report["gamma_fp"] = gamma
    _write_json(args.out, "report.json", report)
    _write_json(
        args.out,
        "timing.json",
        {"scan": rep.timing, "total_s": time.perf_counter() - t0},
    )
    print(f"M_global = {rep.M_global}, M_{k} = {rep.M_k[k]}, ratio = {rep.ratio}")
    return 0


def _check_convexity(inst, opts, seed: int, exact: bool) -> dict:
    field = lift_instance(inst)[0] if inst.is_vector else inst.scalar_field()
    params = ConvexityParams(C_w=1024.0, delta_max=0.5)
    rep = convexity_check(field, params, trials=50, seed=seed)
    return {
        "id": "convexity_combination",
        "exercises": "closure of the shape sets under unity-pair sum-of-squares combinations",
        "ok": bool(rep["within_params"] and rep["failed"] == 0),
        "trials": rep["trials"],
        "passed": rep["passed"],
        "skipped": rep["skipped"],
        "C_w": rep["empirical_C_w"],
    }


def _check_refinement(inst, opts, seed: int, exact: bool) -> dict:
    field = inst.scalar_field()
    if not field.is_polytopal:
        raise GuardExceeded("refinement agreement needs a polytopal (equality) instance")
    ex = refine(field, 1, mode="explicit")
    orc = refine(field, 1, mode="oracle")
    rng = np.random.default_rng(seed)
    L = field.L
    pts = sorted(field.points)
    agree = 0
    queries = 200
    for q in range(queries):
        x = pts[int(rng.integers(len(pts)))]
        M = float(0.5 + 3.5 * rng.random())
        vec = rng.uniform(-2.0 * M, 2.0 * M, size=L)
        if q % 2 == 0:
            w = feasible(field.polytope_at(x), M)
            if w.is_feasible:
                vec = np.asarray(w.witness, dtype=float)
        P = Jet(x, field.degree, vec)
        if ex.member(x, M, P) == orc.member(x, M, P):
            agree += 1
    return {
        "id": "refinement_agreement",
        "exercises": "explicit one-step refinement equals the oracle cascade",
        "ok": agree == queries,
        "agree": agree,
        "queries": queries,
    }


def _check_basis(inst, opts, seed: int, exact: bool) -> dict:
    field = inst.scalar_field()
    cfg = inst.config
    if cfg.m < 2:
        raise GuardExceeded("basis constructions need m >= 2 (an order-1 index)")
    x0 = sorted(field.points)[0]
    M0 = 1.0
    P0 = None
    for _ in range(12):
        P0 = field.witness(x0, M0)
        if P0 is not None:
            break
        M0 *= 2.0
    if P0 is None:
        raise GuardExceeded(f"no member of the shape set at {x0} for M <= {M0}")
    a = next(al for al in multiindices(cfg.n, cfg.m - 1) if sum(al) == 1)
    PA = Jet.monomial(x0, field.degree, a, 1.0)
    C = measure_C_B([a], {a: PA}, P0, 1.0, M0, field, x0, weak=True)
    A = IndexSet.of(cfg.m, cfg.n, [a])
    cert = BasisCertificate(A, 1.0, C, x0, M0, P0, {a: PA}, weak=True)
    weak_rep = check_basis(cert, field)
    full = relabel(cert, field)
    full_rep = check_basis(full, field)
    conds = lambda rep: {k: rep[k]["pass"] for k in ("pb1", "pb2", "pb3", "pb4") if k in rep}
    return {
        "id": "basis_constructions",
        "exercises": "weak basis measurement, relabeling to a full basis, and recheck",
        "ok": bool(weak_rep["ok"] and full_rep["ok"]),
        "C_B_weak": C,
        "C_B_full": full.C_B,
        "A": [list(t) for t in A.members],
        "A_hat": [list(t) for t in full.A.members],
        "weak_conditions": conds(weak_rep),
        "full_conditions": conds(full_rep),
    }


def _reference_leaves(E, pad: float = 3.0, scale_cap: float = 1.0):
    """Direct recursive stopping-time reference, independent of cz_decompose."""
    rlo, rhi = region_for(E, pad)
    pts = [tuple(float(v) for v in p) for p in E]

    def ok(Q: DyadicCube) -> bool:
        dlo, dhi = Q.dilate(5.0)
        inside = sum(
            all(a <= v <= b for v, a, b in zip(p, dlo, dhi)) for p in pts
        )
        return Q.side <= scale_cap and inside <= 1

    ext = max(h - l for l, h in zip(rlo, rhi))
    k = -60
    while 2.0**k < ext:
        k += 1
    roots = []
    for corner in itertools.product(
        *[
            range(math.floor(l / 2.0**k), math.ceil(h / 2.0**k) + 1)
            for l, h in zip(rlo, rhi)
        ]
    ):
        Q = DyadicCube(k, corner)
        if all(q * 2.0**k < h for q, h in zip(corner, rhi)):
            roots.append(Q)

    def rec(Q):
        if ok(Q):
            return [Q]
        return [leaf for ch in Q.children() for leaf in rec(ch)]

    leaves = [leaf for Q in roots for leaf in rec(Q)]
    return sorted(leaves, key=lambda q: (q.level, q.corner))


def _check_cz(inst, opts, seed: int, exact: bool) -> dict:
    E = inst.E
    region = region_for(E, 3.0)
    tree = cz_decompose(region, ok_simple(E))
    ref = _reference_leaves(E)
    got = [(q.level, q.corner) for q in tree.leaves]
    want = [(q.level, q.corner) for q in ref]
    return {
        "id": "cz_oracle_equality",
        "exercises": "stack-based stopping-time decomposition equals direct recursion",
        "ok": got == want,
        "leaves": len(got),
        "reference_leaves": len(want),
    }


_CHECKS = {
    "convexity": _check_convexity,
    "refinement": _check_refinement,
    "basis": _check_basis,
    "cz": _check_cz,
}


def cmd_check(args) -> int:
    inst, opts, sha = load_instance(args.instance)
    exact = args.exact or opts.arithmetic == "exact"
    seed = args.seed if args.seed is not None else opts.seed
    os.makedirs(args.out, exist_ok=True)
    t0 = time.perf_counter()
    result = _CHECKS[args.what](inst, opts, seed, exact)
    report = _base_report(args, sha, opts)
    report.update({"command": "check", "what": args.what, "checks": [result], "ok": result["ok"]})
    _write_json(args.out, "report.json", report)
    _write_json(args.out, "timing.json", {"check_s": time.perf_counter() - t0})
    print(f"{result['id']}: {'pass' if result['ok'] else 'FAIL'}")
    return 0 if result["ok"] else 1


# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser):
    p.add_argument("instance", help="instance JSON file")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the instance seed")
    p.add_argument("--exact", action="store_true", help="exact rational LPs")
    p.add_argument("--guard-subsets", type=int, default=None, help="subset budget cap")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="whitsel",
        description="constrained smooth interpolation and selection experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("solve", help="minimal-M global interpolant")
    _common(ps)
    ps.add_argument("--grid", type=int, default=0, help="export grid.csv with this many ticks per axis")

    pf = sub.add_parser("finiteness", help="subset scan and per-level emptiness")
    _common(pf)
    pf.add_argument("--k", type=int, default=None, help="max subset size")
    pf.add_argument("--l", type=int, default=None, help="max refinement level for the emptiness scan")
    pf.add_argument("--helly", action="store_true", help="cross-check emptiness against low-width joint systems (exact mode)")

    pc = sub.add_parser("check", help="construction self-checks")
    _common(pc)
    pc.add_argument("--what", required=True, choices=sorted(_CHECKS))

    args = parser.parse_args(argv)
    handler = {"solve": cmd_solve, "finiteness": cmd_finiteness, "check": cmd_check}[args.command]
    try:
        return handler(args)
    except InfeasibleError as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return 2
    except (SchemaError, ValueError, TypeError, KeyError, OSError, GuardExceeded, AssertionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
