import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rwrc import netsolve as ns
from rwrc.oracles import crossing_bound_violations, random_network

FIXTURES = Path(__file__).parent / "fixtures"


def test_stationary_measure_examples():
    assert ns.stationary_measure(ns.FiniteNetwork(2, ((0, 1, 3.0),))).tolist() == [3.0, 3.0]
    tri = ns.FiniteNetwork(3, ((0, 1, 1.0), (0, 2, 1.0), (1, 2, 1.0)))
    assert ns.stationary_measure(tri).tolist() == [2.0, 2.0, 2.0]
    star = ns.FiniteNetwork(4, ((0, 1, 1.0), (0, 2, 2.0), (0, 3, 3.0)))
    assert ns.stationary_measure(star)[0] == 6.0
    with pytest.raises(ns.NetworkError):
        ns.stationary_measure(ns.FiniteNetwork(2, ((0, 1, 1.0),), absorbing=1))


@pytest.mark.parametrize("n, edges, absorbing", [
    (3, ((0, 1, 1.0),), None),          # vertex 2 isolated
    (2, ((0, 1, 0.0),), None),
    (2, ((0, 0, 1.0),), None),
    (2, ((0, 5, 1.0),), None),
    (2, ((0, 1, 1.0),), 7),
])
def test_invalid_networks(n, edges, absorbing):
    with pytest.raises(ns.NetworkError):
        ns.FiniteNetwork(n, edges, absorbing)


def test_exit_distribution_examples():
    two = ns.FiniteNetwork(3, ((0, 1, 1.0), (0, 2, 3.0)))
    assert np.allclose(ns.exit_distribution(two, 0, [1, 2]), [0.25, 0.75], rtol=0, atol=1e-15)
    net, plus, minus = ns.star_edge_network(10.0, [1, 1, 1], [1, 1, 1])
    p = ns.exit_distribution(net, 0, plus + minus)
    assert np.allclose(p, [13 / 69] * 3 + [10 / 69] * 3, rtol=0, atol=1e-14)
    # square 0-1-2-3 with exits 4 and 5 hanging symmetrically off vertices 1 and 3
    sym = ns.FiniteNetwork(6, ((0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 0, 1.0), (1, 4, 2.0), (3, 5, 2.0)))
    assert np.allclose(ns.exit_distribution(sym, 0, [4, 5]), [0.5, 0.5], atol=1e-14)


def test_exit_distribution_rejections():
    two = ns.FiniteNetwork(3, ((0, 1, 1.0), (0, 2, 3.0)))
    for bad in ([], [1, 1], [0, 1]):
        with pytest.raises(ns.NetworkError):
            ns.exit_distribution(two, 0, bad)


def _monte_carlo_exit(net, start, absorbing, walkers, rng):
    P = net.transition_matrix()
    cum = np.cumsum(P, axis=1)
    cum[:, -1] = 1.0
    pos = np.full(walkers, start)
    absorbed = np.zeros(net.n_vertices, dtype=bool)
    absorbed[absorbing] = True
    live = np.arange(walkers)
    while live.size:
        u = rng.random(live.size)
        pos[live] = np.minimum((u[:, None] > cum[pos[live]]).sum(axis=1), net.n_vertices - 1)
        live = live[~absorbed[pos[live]]]
    return np.array([(pos == a).mean() for a in absorbing])


def test_exit_distribution_against_monte_carlo(rng):
    walkers = 10**6
    for _ in range(20):
        net = random_network(rng, max_vertices=8, lo=0.1, hi=10.0)
        absorbing = [1] + [v for v in range(2, net.n_vertices) if rng.random() < 0.3]
        exact = ns.exit_distribution(net, 0, absorbing)
        assert abs(exact.sum() - 1.0) < 1e-12
        mc = _monte_carlo_exit(net, 0, absorbing, walkers, rng)
        sd = np.sqrt(np.maximum(exact * (1 - exact), 1e-12) / walkers)
        assert np.all(np.abs(mc - exact) <= 4 * sd + 1e-12)


def test_expected_crossings_examples():
    edge = ns.FiniteNetwork(2, ((0, 1, 2.5),), absorbing=1)
    assert ns.expected_crossings(edge, 0, [0]) == pytest.approx(1.0, abs=1e-14)
    tri = ns.load_network(FIXTURES / "triangle.net")
    val = ns.expected_crossings(tri, 0, [0, 1, 2])
    assert val == pytest.approx(2.0, abs=1e-12)
    bound = 2.0 / tri.edges[1][2] * sum(c for _, _, c in tri.edges)
    assert val <= bound == 6.0
    with pytest.raises(ns.NetworkError):
        ns.expected_crossings(tri, 2, [0])
    with pytest.raises(ns.NetworkError):
        ns.expected_crossings(ns.FiniteNetwork(2, ((0, 1, 1.0),)), 0, [0])


def test_crossing_bound_on_random_networks():
    assert crossing_bound_violations(200, seed=0) == 0


def test_green_function_counts_visits():
    # on a path 0-1-2 with 2 absorbing and unit weights, visits to 0 from 0 are geometric with mean 2
    path = ns.FiniteNetwork(3, ((0, 1, 1.0), (1, 2, 1.0)), absorbing=2)
    G = ns.green_killed(path, 0)
    assert np.allclose(G, [2.0, 2.0, 0.0], atol=1e-14)


def test_effective_resistance_examples():
    assert ns.effective_resistance(ns.FiniteNetwork(2, ((0, 1, 4.0),)), 0, 1) == pytest.approx(0.25)
    assert ns.effective_resistance(ns.FiniteNetwork(2, ((0, 1, 1.0), (0, 1, 1.0))), 0, 1) == pytest.approx(0.5)
    assert ns.effective_resistance(ns.FiniteNetwork(3, ((0, 1, 1.0), (1, 2, 2.0))), 0, 2) == pytest.approx(1.5)
    with pytest.raises(ns.NetworkError):
        ns.effective_resistance(ns.FiniteNetwork(2, ((0, 1, 4.0),)), 1, 1)


@given(st.integers(0, 2**32 - 1), st.floats(1.0, 100.0))
@settings(max_examples=40)
def test_rayleigh_monotonicity(seed, factor):
    rng = np.random.default_rng(seed)
    net = random_network(rng, max_vertices=12)
    k = int(rng.integers(len(net.edges)))
    edges = list(net.edges)
    u, v, c = edges[k]
    edges[k] = (u, v, c * factor)
    stronger = ns.FiniteNetwork(net.n_vertices, tuple(edges))
    plain = ns.FiniteNetwork(net.n_vertices, net.edges)
    assert ns.effective_resistance(stronger, 0, 1) <= ns.effective_resistance(plain, 0, 1) * (1 + 1e-12)


def test_resistance_through_a_single_bridge():
    # 0-1 is the only route between the two vertices, so R = 1 / c(0, 1) however
    # strong the dead-end edge at 0 is
    for strong in (133.0659152109396, 266.1318304218792, 1e6):
        net = ns.FiniteNetwork(9, ((0, 1, 0.0014254422682045186), (0, 2, 0.05584642162161352),
                                   (2, 3, 0.01066526285971806), (1, 4, 0.21532987634747133),
                                   (0, 5, 0.0013429330853366264), (3, 6, 0.6551791242343481),
                                   (4, 7, 0.6425920893851548), (0, 8, 0.1009944120693976), (3, 0, strong)))
        assert ns.effective_resistance(net, 0, 1) == pytest.approx(1 / 0.0014254422682045186, rel=1e-14)


def test_reversibility_exact_on_dyadic_fixture():
    # every vertex weight is a power of two, so pi and p are exact in binary
    net = ns.FiniteNetwork(4, ((0, 1, 1.0), (0, 2, 1.0), (0, 3, 2.0), (1, 2, 1.0), (2, 3, 2.0)))
    pi = ns.stationary_measure(net)
    assert pi.tolist() == [4.0, 2.0, 4.0, 4.0]
    flow = pi[:, None] * net.transition_matrix()
    assert np.array_equal(flow, flow.T)


def test_large_network_uses_iterative_solver():
    n = ns.DENSE_LIMIT + 500
    edges = tuple((i, i + 1, 1.0 + (i % 3)) for i in range(n - 1))
    path = ns.FiniteNetwork(n, edges)
    expected = sum(1.0 / c for _, _, c in edges)
    assert ns.effective_resistance(path, 0, n - 1) == pytest.approx(expected, rel=1e-9)


def test_fixture_format_round_trip(tmp_path):
    tri = ns.load_network(FIXTURES / "triangle.net")
    assert tri.n_vertices == 3 and tri.absorbing == 2 and len(tri.edges) == 3
    p = tmp_path / "x.net"
    p.write_text(ns.format_network(tri))
    assert ns.load_network(p) == tri
    for bad in ("edge 0 1 1\n", "vertices 2\nedge 0 1 x\n", "vertices 2\nfoo\n"):
        with pytest.raises(ns.NetworkError):
            ns.parse_network(bad)
