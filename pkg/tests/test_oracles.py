import numpy as np

from rwrc.oracles import exit_law_agreement, oracle_suite, random_network, random_star


def test_random_network_shape(rng):
    for _ in range(50):
        net = random_network(rng)
        assert 2 <= net.n_vertices <= 30 and net.absorbing == 1
        assert net.edges[0][:2] == (0, 1)
        assert all(1e-3 <= c <= 1e3 for _, _, c in net.edges)


def test_random_star_sizes(rng):
    c, a, b = random_star(rng, 3)
    assert c > 0 and len(a) == len(b) == 5


def test_exit_law_agreement_is_tight():
    assert exit_law_agreement(100, seed=1) <= 1e-10


def test_suite_passes_and_is_deterministic():
    a, b = oracle_suite(0), oracle_suite(0)
    assert a == b
    failed = [k for k, v in a.items() if not v["pass"]]
    assert not failed
    assert set(a) >= {"star_exit_law", "exit_law_vs_linear_solve", "triangle_crossings",
                      "crossing_bound_random_networks", "half_excursion_param"}
