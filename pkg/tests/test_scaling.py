import json
import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rwrc.env import ConductanceLaw
from rwrc.scaling import (ScalingReport, clock_selfsimilarity_test, displacement_exponent, estimate_limit_constants,
                          estimate_sigma, hill_estimate, hill_sensitivity, inv_scale, max_term_ratio,
                          partial_sums, psd_sqrt, transverse_fk_check, v0_from_displacements)


def pareto(rng, gamma, size, x_min=1.0):
    return x_min * rng.random(size) ** (-1.0 / gamma)


# -- inv_scale -------------------------------------------------------------------------------

def test_inv_scale_pareto():
    assert inv_scale(ConductanceLaw(0.5), 100) == pytest.approx(1e4, rel=1e-12)
    for g in (0.2, 0.5, 0.9):
        for n in (1.0, 10.0, 1e5):
            assert inv_scale(ConductanceLaw(g), n) == pytest.approx(n ** (1 / g), rel=1e-12)
    with pytest.raises(ValueError):
        inv_scale(ConductanceLaw(0.5), 0.5)


@pytest.mark.parametrize("n", [1.0, 3.0, 1e2, 1e4, 1e7])
def test_inv_scale_log_power_defining_inequalities(n):
    law = ConductanceLaw(0.6, "log_power", beta=1.5, x_min=2.0)
    x = inv_scale(law, n)
    assert float(law.tail(x)) <= 1 / n
    if n > 1:
        assert float(law.tail(x * (1 - 1e-9))) > 1 / n


def test_inv_scale_monotone():
    for law in (ConductanceLaw(0.5), ConductanceLaw(0.7, "log_power", beta=2.0),
                ConductanceLaw(slowly_varying="bounded", lo=0.5, hi=2.0)):
        vals = [inv_scale(law, n) for n in np.logspace(0, 8, 40)]
        assert np.all(np.diff(vals) >= 0)


# -- Hill ------------------------------------------------------------------------------------

def test_hill_on_pareto(rng):
    fit = hill_estimate(pareto(rng, 0.5, 10**5), k=1000)
    assert abs(fit.gamma_hat - 0.5) <= 0.05
    assert fit.k_used == 1000
    assert fit.ci_half_width == pytest.approx(1.96 * fit.gamma_hat / math.sqrt(1000))


def test_hill_interval_coverage(rng):
    hits = 0
    for _ in range(400):
        fit = hill_estimate(pareto(rng, 0.5, 4000), k=200)
        hits += abs(fit.gamma_hat - 0.5) <= fit.ci_half_width
    assert 0.90 <= hits / 400 <= 0.99


@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
@settings(max_examples=30)
def test_hill_scale_invariance(seed, factor):
    x = pareto(np.random.default_rng(seed), 0.7, 500)
    assert hill_estimate(x * factor).gamma_hat == pytest.approx(hill_estimate(x).gamma_hat, rel=1e-9)


def test_hill_rejections():
    with pytest.raises(ValueError):
        hill_estimate(np.full(100, 3.0))
    with pytest.raises(ValueError):
        hill_estimate(np.arange(1.0, 11.0), k=10)
    with pytest.raises(ValueError):
        hill_estimate([1.0, -2.0, 3.0], k=1)


def test_hill_default_k_and_sensitivity(rng):
    x = pareto(rng, 0.5, 10**4)
    assert hill_estimate(x).k_used == 100
    assert sorted(hill_sensitivity(x)) == [50, 100, 200]


# -- displacement exponent -------------------------------------------------------------------

CK = [10, 100, 1000, 10_000]


def test_straight_path_exponent_is_one():
    assert displacement_exponent(np.array(CK, dtype=float), CK) == pytest.approx(1.0, abs=1e-12)


def test_power_law_levels(rng):
    c = np.array(CK, dtype=float)
    levels = 3.0 * c[None, :] ** 0.5 * np.exp(rng.normal(0, 0.01, (32, len(c))))
    assert displacement_exponent(levels, CK) == pytest.approx(0.5, abs=0.02)


def test_exponent_skips_non_positive_levels():
    levels = np.array([[1.0, -1.0, 100.0, 1000.0]]) * np.array([1, 1, 1, 1])
    with pytest.warns(RuntimeWarning):
        assert displacement_exponent(levels, CK) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("ck", [[10, 100], [10, 20, 900], [0, 10, 1000]])
def test_exponent_checkpoint_rejections(ck):
    with pytest.raises(ValueError):
        displacement_exponent(np.ones(len(ck)), ck)


def test_bounded_environment_is_ballistic():
    from rwrc.engine import StreamingWalker
    from rwrc.env import ConductanceField
    from rwrc.regen import RegenConfig
    ck = [1000, 10_000, 100_000]
    levels = []
    for r in range(4):
        f = ConductanceField(ConductanceLaw(slowly_varying="bounded", lo=0.5, hi=2.0), seed=r, K=2.5,
                             bias_lambda=1.0)
        w = StreamingWalker(f, 100 + r, RegenConfig(), checkpoints=ck)
        res = w.run(horizon=ck[-1])
        levels.append(res.checkpoint_positions @ f.direction)
    assert abs(displacement_exponent(np.array(levels), ck) - 1.0) <= 0.05


# -- clock self-similarity -------------------------------------------------------------------

def test_selfsimilarity_accepts_stable_durations(rng):
    x = pareto(rng, 0.5, 500 * 5000)
    assert clock_selfsimilarity_test(x, 1000, 4000, 500, gamma=0.5) > 0.01
    assert clock_selfsimilarity_test(x, 1000, 4000, 500, law=ConductanceLaw(0.5)) > 0.01


def test_selfsimilarity_rejects_light_tails(rng):
    x = rng.exponential(size=500 * 5000)
    assert clock_selfsimilarity_test(x, 1000, 4000, 500, gamma=0.5) < 0.01


def test_selfsimilarity_rejections(rng):
    x = pareto(rng, 0.5, 10_000)
    with pytest.raises(ValueError):
        clock_selfsimilarity_test(x, 1000, 3000, 500, gamma=0.5)
    with pytest.raises(ValueError):
        clock_selfsimilarity_test(x, 1000, 4000, 10, gamma=0.5)
    with pytest.raises(ValueError):
        clock_selfsimilarity_test(x, 1000, 4000, 500)
    with pytest.raises(ValueError):
        clock_selfsimilarity_test(x[:500], 1000, 4000, 500, gamma=0.5)


def test_partial_sums_resample_deterministically(rng):
    x = pareto(rng, 0.5, 1000)
    a = partial_sums(x, 100, 50, seed=3)
    assert np.array_equal(a, partial_sums(x, 100, 50, seed=3))
    assert np.array_equal(partial_sums(x, 10, 20), x[:200].reshape(20, 10).sum(axis=1))


def test_single_big_jump(rng):
    r = max_term_ratio(pareto(rng, 0.5, 10**6), 1000, 500, seed=1)
    assert np.median(r) >= 0.5


# -- covariance and FK -----------------------------------------------------------------------

def test_sigma_estimate_isotropic(rng):
    true = np.diag([2.0, 2.0, 2.0])
    D = rng.multivariate_normal(np.zeros(3), true, size=10_000)
    S = estimate_sigma(D)
    assert np.array_equal(S, S.T)
    assert np.linalg.eigvalsh(S).min() >= 0
    assert np.linalg.norm(S - true) / np.linalg.norm(true) < 0.05
    assert np.allclose(psd_sqrt(S) @ psd_sqrt(S), S, atol=1e-12)


def test_v0_sign_convention():
    D = np.array([[-2.0, -1.0], [-4.0, -1.0]])
    v, v0 = v0_from_displacements(D, [1.0, 0.0])
    assert np.allclose(v, [-3.0, -1.0]) and v0 @ [1.0, 0.0] > 0 and np.linalg.norm(v0) == pytest.approx(1.0)


def _synthetic_fk(rng, gamma, d=2, replicas=400):
    ck = np.array([10, 100, 1000, 10_000])
    v0 = np.zeros(d)
    v0[0] = 1.0
    blocks = rng.normal(0, 1, (5000, d))
    blocks[:, 0] += 3.0
    X = np.zeros((replicas, len(ck), d))
    X[:, :, 0] = ck ** gamma
    X[:, :, 1:] = rng.normal(0, 1, (replicas, len(ck), d - 1)) * np.sqrt(ck ** gamma)[None, :, None]
    return X, ck, blocks


def test_fk_slope_and_projection(rng):
    X, ck, blocks = _synthetic_fk(rng, 0.5, d=3)
    fk = transverse_fk_check(X, ck, blocks, [1.0, 0.0, 0.0])
    assert fk.slope == pytest.approx(0.5, abs=0.05)
    assert np.max(np.abs(fk.v0_hat @ fk.Md_hat)) < 1e-8
    assert not fk.rank_deficient


def test_fk_single_transverse_axis(rng):
    X, ck, blocks = _synthetic_fk(rng, 0.5)
    blocks = np.concatenate([blocks, blocks * [1, -1]])  # mean exactly along e_1
    fk = transverse_fk_check(X, ck, blocks, [1.0, 0.0])
    assert np.allclose(fk.msd, (X[:, :, 1] ** 2).mean(axis=0), rtol=1e-12)


def test_fk_flags_and_rejections(rng):
    X, ck, blocks = _synthetic_fk(rng, 0.5)
    line = np.outer(rng.random(100) + 1, [1.0, 1.0])
    assert transverse_fk_check(X, ck, line, [1.0, 0.0]).rank_deficient
    with pytest.raises(ValueError):
        transverse_fk_check(X[:, :, :1], ck, blocks[:, :1], [1.0])
    with pytest.raises(ValueError):
        transverse_fk_check(X[:, :2], ck[:2], blocks, [1.0, 0.0])


# -- limit constants and report --------------------------------------------------------------

def _fake_blocks(n_blocks, n_lt, n):
    out = [SimpleNamespace(initial=True, max_conductance=0.0)]
    out += [SimpleNamespace(initial=False, max_conductance=2 * n if i < n_lt else 1.0) for i in range(n_blocks)]
    return out


def test_limit_constants_with_unit_w():
    law = ConductanceLaw(0.5)
    n = 1e4
    c1, cinf = estimate_limit_constants(_fake_blocks(1000, 1000, n), law, n, w_values=[1.0] * 1000)
    assert c1 == pytest.approx(1.0 / law.tail(n))
    assert cinf == pytest.approx(c1 ** (1 / 0.5))
    c1, _ = estimate_limit_constants(_fake_blocks(1000, 10, n), law, n, w_values=[1.0] * 10)
    assert c1 == pytest.approx(0.01 / law.tail(n))
    with pytest.raises(ValueError):
        estimate_limit_constants(_fake_blocks(100, 0, n), law, n)


def test_report_serializes():
    rep = ScalingReport(0.5, hill_estimate(np.arange(1.0, 200.0)), 0.51, v0_hat=np.array([1.0, 0.0]),
                        extra={"x": np.float64(2.0), "y": [np.int64(3)]})
    d = json.loads(rep.to_json())
    assert d["gamma_config"] == 0.5 and d["v0_hat"] == [1.0, 0.0] and d["extra"] == {"x": 2.0, "y": [3]}
    assert d["gamma_from_blocks"]["k_used"] == 14
