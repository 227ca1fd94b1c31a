import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rwrc.engine import StreamingWalker
from rwrc.env import ConductanceField, ConductanceLaw, LatticeEdge, classify_vertex
from rwrc.walk import (EnhancedTrajectory, WalkRng, default_margin, detect_D, kernel_at, ladder_times,
                       run_walk, step_enhanced)

from conftest import unit_field

E = math.e


def test_kernel_unit_field_values():
    k = kernel_at(unit_field(K=2.0), (0, 0))
    Z = E + 1 / E + 2
    assert k.prob((1, 0)) == pytest.approx(E / Z, abs=1e-15)
    assert k.prob((1, 0)) == pytest.approx(0.53445, abs=5e-6)
    assert k.prob((-1, 0)) == pytest.approx(0.07233, abs=5e-6)
    assert k.prob((0, 1)) == pytest.approx(0.19661, abs=5e-6)
    assert k.prob((0, -1)) == pytest.approx(0.19661, abs=5e-6)
    assert k.p.sum() == pytest.approx(1.0, abs=1e-12)


def test_kernel_without_drift_is_uniform():
    k = kernel_at(unit_field(K=2.0, bias_lambda=1e-300, dimension=3), (4, -2, 7))
    assert np.allclose(k.p, 1 / 6, rtol=0, atol=1e-15)


def test_clamped_kernel_mass_unit_field():
    k = kernel_at(unit_field(K=2.0), (0, 0))
    assert k.pK.sum() == pytest.approx(0.25, abs=1e-15)


@given(st.integers(0, 2**63), st.floats(0.5, 4.0), st.floats(1.0, 30.0))
@settings(max_examples=60)
def test_clamped_mass_at_open_vertices_is_K_minus_2(seed, lam, K):
    # at an open vertex every clamp saturates: p_K sums to K^-2 whatever the conductances
    f = ConductanceField(ConductanceLaw(0.5, x_min=1 / K), seed=seed, K=K, bias_lambda=lam)
    for i in range(30):
        x = (i, 2 * i)
        if classify_vertex(f, x) == "open":
            assert kernel_at(f, x).pK.sum() == pytest.approx(K ** -2, rel=1e-12)


@given(st.integers(0, 2**63), st.floats(0.1, 5.0), st.floats(1.0, 100.0),
       st.lists(st.integers(-10**4, 10**4), min_size=2, max_size=2))
@settings(max_examples=100)
def test_kernel_probabilities_and_domination(seed, lam, K, x):
    f = ConductanceField(ConductanceLaw(0.5, x_min=0.1), seed=seed, K=K, bias_lambda=lam)
    k = kernel_at(f, x)
    assert k.p.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(k.pK >= 0) and np.all(k.pK <= k.p)


def test_reversibility_at_random_vertices(rng):
    f = ConductanceField(ConductanceLaw(0.5), seed=99, K=20.0, bias_lambda=1.7,
                         bias_direction=[0.8, 0.6])
    worst = 0.0
    for _ in range(10**5 // 4):
        x = tuple(int(v) for v in rng.integers(-500, 500, 2))
        kx = kernel_at(f, x)
        for j in range(2):
            y = list(x)
            y[j] += 1
            ky = kernel_at(f, y)
            a = kx.log_pi + math.log(kx.prob(y))
            b = ky.log_pi + math.log(ky.prob(x))
            worst = max(worst, abs(math.expm1(b - a)))
    assert worst < 1e-10


def test_step_marginal_matches_kernel():
    f = ConductanceField(ConductanceLaw(0.5), seed=31, K=5.0, bias_lambda=1.0)
    x = (3, -2)
    k = kernel_at(f, x)
    rng = WalkRng(17)
    n = 10**6
    counts = np.zeros(4)
    zc = np.zeros(4)
    for _ in range(n):
        y, z = step_enhanced(f, (x, 0), rng)
        j = [(4, -2), (3, -1), (2, -2), (3, -3)].index(y)
        counts[j] += 1
        zc[j] += z
    sd = np.sqrt(n * k.p * (1 - k.p))
    assert np.all(np.abs(counts - n * k.p) <= 4 * sd + 1e-9)
    sdz = np.sqrt(n * k.pK * (1 - k.pK))
    assert np.all(np.abs(zc - n * k.pK) <= 4 * sdz + 1e-9)


def test_z_frequency_unit_field():
    tr = run_walk(unit_field(K=2.0), (0, 0), 10**5, WalkRng(5))
    assert abs(tr.zbits[1:].mean() - 0.25) <= 0.005


def test_step_ignores_incoming_bit():
    f = ConductanceField(ConductanceLaw(0.5), seed=8)
    a = [step_enhanced(f, ((1, 1), 0), r) for r in [WalkRng(4)]]
    b = [step_enhanced(f, ((1, 1), 1), r) for r in [WalkRng(4)]]
    assert a == b


def test_run_walk_equals_repeated_steps(pareto_field):
    tr = run_walk(pareto_field, (2, 5), 300, WalkRng(77))
    rng = WalkRng(77)
    state = ((2, 5), 1)
    for n in range(1, 301):
        state = step_enhanced(pareto_field, state, rng)
        assert tuple(tr.positions[n]) == state[0]
        assert tr.zbits[n] == state[1]


def test_run_walk_length_contract(pareto_field):
    with pytest.raises(ValueError):
        run_walk(pareto_field, (0, 0), 0, WalkRng(1))
    tr = run_walk(pareto_field, (0, 0), 1, WalkRng(1))
    assert len(tr) == 2


def test_run_walk_is_deterministic(pareto_field):
    a = run_walk(pareto_field, (0, 0), 5000, WalkRng(3))
    b = run_walk(pareto_field, (0, 0), 5000, WalkRng(3))
    c = run_walk(pareto_field, (0, 0), 5000, WalkRng(4))
    assert np.array_equal(a.positions, b.positions) and np.array_equal(a.zbits, b.zbits)
    assert not np.array_equal(a.positions, c.positions)


def test_walk_is_transient_in_the_bias_direction():
    positive = 0
    for s in range(100):
        f = ConductanceField(ConductanceLaw(0.5), seed=1000 + s, K=20.0, bias_lambda=1.0)
        res = StreamingWalker(f, 5000 + s).run(horizon=10**6)
        positive += res.final_position @ f.direction > 0
    assert positive >= 95


def test_trajectory_rejects_jumps():
    with pytest.raises(ValueError):
        EnhancedTrajectory(np.array([[0, 0], [2, 0]]), np.array([1, 1]), np.array([1.0, 0.0]))


@given(st.lists(st.integers(0, 3), min_size=1, max_size=200))
def test_ladder_times_property(moves):
    steps = np.array([[1, 0], [0, 1], [-1, 0], [0, -1]])[moves]
    tr = EnhancedTrajectory.from_steps((0, 0), steps, np.ones(len(moves) + 1), [0.8, 0.6])
    lt = tr.ladder_times
    lv = tr.levels
    assert lt[0] == 0
    assert np.all(np.diff(lv[lt]) > 0)
    for a, b in zip(lt[:-1], lt[1:]):
        assert np.all(lv[a + 1:b] <= lv[a] + 1e-9)
    assert np.all(lv[lt[-1] + 1:] <= lv[lt[-1]] + 1e-9)


# -- backtracking functional D ---------------------------------------------------------------

def _traj(steps, z, direction=(1.0, 0.0)):
    return EnhancedTrajectory.from_steps((0, 0), steps, z, direction)


def test_D_immediate_backtrack():
    assert detect_D(_traj([(-1, 0)], [1, 1]), margin=5) == ("finite", 1)


def test_D_zero_bit_first_step():
    assert detect_D(_traj([(1, 0)], [1, 0]), margin=5) == ("finite", 1)


def test_D_straight_path_certified():
    tr = _traj([(1, 0)] * 12, [1] * 13)
    assert detect_D(tr, margin=10) == ("certified_infinite", 10)


def test_D_censored_when_short():
    assert detect_D(_traj([(1, 0)] * 3, [1] * 4), margin=10).status == "censored"


def test_default_margin():
    assert default_margin([1.0, 0.0]) == 30
    assert default_margin([0.8, 0.6]) == 50


def naive_D(pos, z, direction, margin):
    """Direct evaluation of the three clauses, each scanned independently."""
    lvl = [float(np.dot(p, direction)) for p in pos]
    pos_dir = [v for v in direction if v > 1e-12]
    target = lvl[0] + margin * min(pos_dir)
    d = len(pos[0])
    cands = []
    for n in range(1, len(pos)):
        if lvl[n] <= lvl[0] + 1e-9:
            cands.append(n)
            break
    if len(pos) > 1 and z[1] == 0:
        cands.append(1)
    units = [tuple(int(i == j) for i in range(d)) for j in range(d)]
    for n in range(2, len(pos)):
        if z[n] == 0 and tuple(np.subtract(pos[n - 1], pos[0])) in units:
            cands.append(n)
            break
    hit = next((n for n in range(1, len(pos)) if lvl[n] >= target - 1e-9), None)
    v = min(cands) if cands else None
    if v is not None and (hit is None or v <= hit):
        return ("finite", v)
    if hit is not None:
        return ("certified_infinite", margin)
    return ("censored", None)


def test_D_matches_naive_reference(rng):
    for _ in range(10**4):
        d = int(rng.integers(2, 4))
        direction = np.sort(rng.random(d))[::-1]
        if rng.random() < 0.3:
            direction[1:] = 0.0
        direction /= np.linalg.norm(direction)
        n = int(rng.integers(1, 30))
        axis = rng.integers(0, d, n)
        sign = np.where(rng.random(n) < 0.75, 1, -1)
        steps = np.zeros((n, d), dtype=int)
        steps[np.arange(n), axis] = sign
        z = (rng.random(n + 1) < 0.8).astype(int)
        tr = EnhancedTrajectory.from_steps(np.zeros(d, int), steps, z, direction)
        margin = int(rng.integers(1, 6))
        got = detect_D(tr, margin=margin)
        ref = naive_D(tr.positions, tr.zbits, direction, margin)
        assert (got.status, got.n if got.status == "finite" else got.margin if got.status != "censored"
                else None) == ref
