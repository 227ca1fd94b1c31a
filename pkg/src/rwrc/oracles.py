"""Exact-formula checks that need no simulation, bundled for the ``oracle`` command."""

from __future__ import annotations

import itertools
import math
from typing import Dict, Tuple

import numpy as np

from . import netsolve as ns
from . import trapmodel as tm


def random_network(rng: np.random.Generator, max_vertices: int = 30, lo: float = 1e-3,
                   hi: float = 1e3) -> ns.FiniteNetwork:
    """Connected random network: a random tree plus extra edges, log-uniform conductances.

    Vertex 1 is absorbing and is always joined to vertex 0 by the first edge.
    """
    n = int(rng.integers(2, max_vertices + 1))

    def cond():
        return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))

    edges = [(0, 1, cond())]
    for v in range(2, n):
        edges.append((int(rng.integers(0, v)), v, cond()))
    for _ in range(int(rng.integers(0, 2 * n))):
        u, v = rng.choice(n, size=2, replace=False)
        edges.append((int(u), int(v), cond()))
    return ns.FiniteNetwork(n, tuple(edges), absorbing=1)


def random_star(rng: np.random.Generator, d: int = 2) -> Tuple[float, np.ndarray, np.ndarray]:
    k = 2 * d - 1
    c_e = float(math.exp(rng.uniform(-3, 8)))
    return c_e, np.exp(rng.uniform(-3, 3, k)), np.exp(rng.uniform(-3, 3, k))


def exit_law_agreement(instances: int = 100, seed: int = 0) -> float:
    """Largest componentwise gap between the closed-form exit law and the linear solve."""
    rng = np.random.Generator(np.random.PCG64(seed))
    worst = 0.0
    for _ in range(instances):
        d = int(rng.integers(2, 4))
        c_e, a, b = random_star(rng, d)
        net, plus_ids, minus_ids = ns.star_edge_network(c_e, a, b)
        for start, vid in (("plus", 0), ("minus", 1)):
            closed = tm.exact_exit_distribution(c_e, a, b, start)
            solved = ns.exit_distribution(net, vid, plus_ids + minus_ids)
            worst = max(worst, float(np.max(np.abs(closed - solved))))
    return worst


def crossing_bound_violations(networks: int = 200, seed: int = 0, slack: float = 1e-9) -> int:
    """Count networks where expected crossings of a random edge set exceed 2/c(y, delta) times its mass."""
    rng = np.random.Generator(np.random.PCG64(seed))
    bad = 0
    for _ in range(networks):
        net = random_network(rng)
        m = len(net.edges)
        subset = [k for k in range(m) if rng.random() < 0.5] or [0]
        lhs = ns.expected_crossings(net, 0, subset)
        rhs = 2.0 / net.edges[0][2] * sum(net.edges[k][2] for k in subset)
        if lhs > rhs * (1 + slack):
            bad += 1
    return bad


def oracle_suite(seed: int = 0) -> Dict[str, dict]:
    """Run every exact check; each entry holds value, expected and a pass flag."""
    out: Dict[str, dict] = {}

    def rec(name, value, expected, ok):
        out[name] = {"value": value, "expected": expected, "pass": bool(ok)}

    star = tm.exact_exit_distribution(10.0, [1, 1, 1], [1, 1, 1], "plus")
    rec("star_exit_law", star.tolist(), [13 / 69] * 3 + [10 / 69] * 3,
        np.allclose(star, [13 / 69] * 3 + [10 / 69] * 3, rtol=0, atol=1e-12) and abs(star.sum() - 1) < 1e-12)
    gap = exit_law_agreement(100, seed)
    rec("exit_law_vs_linear_solve", gap, "<= 1e-10", gap <= 1e-10)
    q = tm.half_excursion_geometric_param(10.0, 13.0, 13.0)
    rec("half_excursion_param", q, 69 / 169, abs(q - 69 / 169) < 1e-15)
    coll = tm.collapsed_exit_distribution([1, 1, 1], [1, 1, 1])
    rec("collapsed_star_law", coll.tolist(), [1 / 6] * 6, np.allclose(coll, 1 / 6, rtol=0, atol=1e-15))
    tri = ns.FiniteNetwork(3, ((0, 1, 1.0), (0, 2, 1.0), (1, 2, 1.0)), absorbing=2)
    val = ns.expected_crossings(tri, 0, [0, 1, 2])
    rec("triangle_crossings", val, 2.0, abs(val - 2.0) < 1e-12)
    rec("triangle_crossing_bound", [val, 6.0], "value <= 6", val <= 6.0)
    viol = crossing_bound_violations(200, seed)
    rec("crossing_bound_random_networks", viol, 0, viol == 0)
    two = ns.FiniteNetwork(3, ((0, 1, 1.0), (0, 2, 3.0)))
    ex = ns.exit_distribution(two, 0, [1, 2])
    rec("one_step_exit", ex.tolist(), [0.25, 0.75], np.allclose(ex, [0.25, 0.75], atol=1e-12))
    r = ns.effective_resistance(ns.FiniteNetwork(3, ((0, 1, 1.0), (1, 2, 2.0))), 0, 2)
    rec("series_resistance", r, 1.5, abs(r - 1.5) < 1e-12)
    r = ns.effective_resistance(ns.FiniteNetwork(2, ((0, 1, 1.0), (0, 1, 1.0))), 0, 1)
    rec("parallel_resistance", r, 0.5, abs(r - 0.5) < 1e-12)
    pi = ns.stationary_measure(ns.FiniteNetwork(4, ((0, 1, 1.0), (0, 2, 2.0), (0, 3, 3.0))))
    rec("star_stationary_measure", pi.tolist(), [6.0, 1.0, 2.0, 3.0], np.allclose(pi, [6, 1, 2, 3]))
    return out
