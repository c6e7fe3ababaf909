"""Shared generators for the randomized instance suites.

Everything is driven by explicit numpy Generators so suites are reproducible;
points snap to a 1/8 grid to keep separations honest and LPs well scaled.
"""

import json
import os

import numpy as np

from whitsel.jet_core import GlobalConfig
from whitsel.polytope import HPolytope
from whitsel.selection_solver import PointConstraint, SelectionInstance

HERE = os.path.dirname(__file__)
FROZEN_PATH = os.path.join(HERE, "oracles", "frozen.json")
GOLDEN_PATH = os.path.join(HERE, "golden", "regression.json")


def load_frozen() -> dict:
    with open(FROZEN_PATH, encoding="utf-8") as fh:
        return json.load(fh)


def load_golden() -> dict | None:
    if not os.path.exists(GOLDEN_PATH):
        return None
    with open(GOLDEN_PATH, encoding="utf-8") as fh:
        return json.load(fh)


def golden_check(key: str, value, rel_cap: float | None = None, abs_tol: float = 1e-9):
    """Regression gate against tests/golden/regression.json.

    Missing entries are recorded (the first run writes the baseline, which
    then gets committed); present entries are compared.  rel_cap treats the
    stored value as a ceiling with that much headroom, otherwise scalars and
    lists must match to abs_tol.  Returns (ok, detail)."""
    data = load_golden() or {}
    if key not in data:
        data[key] = value
        os.makedirs(os.path.dirname(GOLDEN_PATH), exist_ok=True)
        with open(GOLDEN_PATH, "w", encoding="utf-8") as fh:
            json.dump(data, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return True, f"{key}: recorded baseline"
    ref = data[key]
    if isinstance(ref, list):
        ok = len(ref) == len(value) and all(
            abs(a - b) <= abs_tol for a, b in zip(ref, value)
        )
        return ok, f"{key}: {len(value)} entries vs baseline"
    if rel_cap is not None:
        ok = value <= ref * (1.0 + rel_cap) + 1e-12
        return ok, f"{key}: {value:.6g} <= {ref:.6g} (+{rel_cap:.0%})"
    ok = abs(value - ref) <= abs_tol
    return ok, f"{key}: {value:.6g} vs {ref:.6g}"


def grid_points(rng, n: int, count: int, lo=0.0, hi=3.0, step=0.125):
    """count distinct points with coordinates on a step grid."""
    pts = set()
    while len(pts) < count:
        p = tuple(round(float(v) / step) * step for v in rng.uniform(lo, hi, n))
        pts.add(p)
    return sorted(pts)


def random_equality_instance(rng, n=None, m=None, size=None) -> SelectionInstance:
    n = int(n if n is not None else rng.integers(1, 3))
    m = int(m if m is not None else rng.integers(1, 4))
    size = int(size if size is not None else rng.integers(2, 7))
    pts = grid_points(rng, n, size)
    cons = [PointConstraint("equality", float(v)) for v in rng.uniform(-2.0, 2.0, size)]
    return SelectionInstance(GlobalConfig(m, n), pts, cons)


def random_nonneg_instance(rng) -> SelectionInstance:
    """Inside the supported envelope: n=1 with m <= 3, n=2 with m <= 2.
    Cm flavor only for n=1 (the n=2 membership test is grid-based and its
    decay heuristic is exercised deterministically elsewhere)."""
    n = int(rng.integers(1, 3))
    m = int(rng.integers(2, 4)) if n == 1 else 2
    flavor = "Cm" if (n == 1 and rng.random() < 0.3) else "Cm11"
    size = int(rng.integers(2, 6)) if n == 1 else int(rng.integers(2, 5))
    pts = grid_points(rng, n, size)
    vals = [0.0 if rng.random() < 0.2 else float(rng.uniform(0.0, 2.0)) for _ in pts]
    cons = [PointConstraint("nonneg", v) for v in vals]
    return SelectionInstance(GlobalConfig(m, n), pts, cons, flavor)


def random_box(rng, D: int, spread=2.0, side=1.0) -> HPolytope:
    lo = rng.uniform(-spread, spread, D)
    hi = lo + rng.uniform(0.25, side, D)
    rows = []
    for d in range(D):
        e = [0.0] * D
        e[d] = 1.0
        rows.append((tuple(e), float(hi[d]), 0.0))
        rows.append((tuple(-v for v in e), -float(lo[d]), 0.0))
    return HPolytope.from_rows(D, rows)


def random_vector_instance(rng, D=None) -> SelectionInstance:
    D = int(D if D is not None else rng.integers(1, 3))
    n = int(rng.integers(1, 3))
    m = int(rng.integers(1, 3))
    size = int(rng.integers(2, 6))
    pts = grid_points(rng, n, size)
    cons = [PointConstraint("convex", random_box(rng, D)) for _ in pts]
    return SelectionInstance(GlobalConfig(m, n, D), pts, cons)


def mixed_suite(seed: int = 0):
    """The criterion-9 suite: n <= 2, m <= 3, D <= 2, |E| <= 7, mixing all
    three constraint kinds."""
    rng = np.random.default_rng(seed)
    suite = []
    for _ in range(10):
        suite.append(random_equality_instance(rng))
    for _ in range(5):
        inst = random_nonneg_instance(rng)
        while len(inst.E) > 4:
            inst = random_nonneg_instance(rng)
        suite.append(inst)
    for _ in range(5):
        suite.append(random_vector_instance(rng))
    return suite
