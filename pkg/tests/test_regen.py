import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rwrc.env import ConductanceField, ConductanceLaw, LatticeEdge
from rwrc.regen import (RegenConfig, chi_of, classify_traps, detect_regenerations, find_Mcal,
                        read_blocks_csv, split_block_time, trap_flags, transverse_basis, write_blocks_csv)
from rwrc.walk import EnhancedTrajectory, WalkRng, run_walk

from conftest import unit_field

E1 = (1, 0)


@pytest.fixture(scope="module")
def bounded_run():
    f = ConductanceField(ConductanceLaw(slowly_varying="bounded", lo=0.5, hi=2.0), seed=3, K=2.5,
                         bias_lambda=1.0, bias_direction=[0.8, 0.6])
    tr = run_walk(f, (0, 0), 100_000, WalkRng(1))
    return f, tr, detect_regenerations(tr, f, RegenConfig(n_threshold=1.9, delta=0.5))


def straight(n, z=None):
    return EnhancedTrajectory.from_steps((0, 0), [E1] * n, z if z is not None else [1] * (n + 1), [1.0, 0.0])


# -- candidates ------------------------------------------------------------------------------

def test_Mcal_straight_path():
    assert find_Mcal(straight(10), 0, unit_field()) == 2


def test_Mcal_skips_closed_candidate():
    f = unit_field(K=2.0, overrides={LatticeEdge((2, 0), (2, 1)): 50.0})
    assert find_Mcal(straight(10), 0, f) == 3


def test_Mcal_needs_double_e1_step():
    tr = EnhancedTrajectory.from_steps((0, 0), [(1, 0), (0, 1)] * 6, [1] * 13, [0.8, 0.6])
    assert find_Mcal(tr, 0, unit_field(direction=[0.8, 0.6])) is None


# -- regeneration times ----------------------------------------------------------------------

def test_first_regeneration_hand_trace():
    seq = detect_regenerations(straight(40), unit_field(K=2.0), RegenConfig(margin=10))
    assert seq.times[:2] == [0, 3]
    assert tuple(straight(40).positions[seq.times[1]]) == (3, 0)


def test_backtracking_path_never_regenerates():
    steps = [(1, 0), (1, 0), (1, 0), (-1, 0), (-1, 0), (-1, 0), (-1, 0)] * 10
    tr = EnhancedTrajectory.from_steps((0, 0), steps, [1] * (len(steps) + 1), [1.0, 0.0])
    seq = detect_regenerations(tr, unit_field(K=2.0), RegenConfig(margin=5))
    assert seq.blocks == [] and seq.censored_tail


def test_blocks_are_contiguous_and_ordered(bounded_run):
    f, tr, seq = bounded_run
    assert len(seq.blocks) > 30
    for a, b in zip(seq.blocks[:-1], seq.blocks[1:]):
        assert a.end_time == b.start_time
        assert a.start_time < a.end_time
    assert seq.blocks[0].initial and not any(b.initial for b in seq.blocks[1:])


def test_block_chain_reproduces_displacement(bounded_run):
    f, tr, seq = bounded_run
    reg = seq.regular()
    total = np.sum([b.displacement for b in reg], axis=0)
    assert np.array_equal(total, tr.positions[reg[-1].end_time] - tr.positions[reg[0].start_time])


def test_level_gain_lower_bound(bounded_run):
    f, tr, seq = bounded_run
    for b in seq.regular():
        assert b.level_gain >= 2 * f.direction[0] - 1e-9
        assert b.level_gain == pytest.approx(np.dot(b.displacement, f.direction))


def test_block_accounting(bounded_run):
    f, tr, seq = bounded_run
    for b in seq.blocks:
        assert 0 <= b.time_below_threshold <= b.duration
        assert 0 <= b.time_on_max_edge <= b.duration
        assert b.duration == b.end_time - b.start_time
        if b.OLT:
            assert b.LT
        assert not (b.SLT and b.OLT)


def test_chi_is_minimal_box(bounded_run):
    f, tr, seq = bounded_run
    alpha = seq.config["alpha"]
    fb = transverse_basis(f.direction)
    for b in seq.blocks:
        rel = tr.positions[b.start_time:b.end_time + 1] - tr.positions[b.start_time]
        a = np.max(np.abs(rel @ f.direction))
        t = np.max(np.abs(rel @ fb.T))
        m = b.chi
        assert a <= m + 1e-9 and t <= m ** alpha + 1e-9
        assert m == 0 or not (a <= m - 1 + 1e-9 and t <= (m - 1) ** alpha + 1e-9)


@given(st.lists(st.tuples(st.integers(-50, 50), st.integers(-50, 50)), min_size=1, max_size=40),
       st.floats(2.0, 8.0))
def test_chi_property(points, alpha):
    direction = np.array([0.8, 0.6])
    rel = np.array(points, dtype=float)
    m = chi_of(rel, direction, alpha)
    fb = transverse_basis(direction)
    a = np.max(np.abs(rel @ direction))
    t = np.max(np.abs(rel @ fb.T))
    assert a <= m + 1e-9 and t <= m ** alpha + 1e-9
    assert m == 0 or not (a <= m - 1 + 1e-9 and t <= (m - 1) ** alpha + 1e-9)


def test_transverse_basis_is_orthonormal():
    for ell in ([1.0, 0.0], [0.8, 0.6], [0.6, 0.48, 0.64]):
        ell = np.array(ell) / np.linalg.norm(ell)
        B = np.vstack([ell, transverse_basis(ell)])
        assert np.allclose(B @ B.T, np.eye(len(ell)), atol=1e-12)


# -- time split and trap flags ---------------------------------------------------------------

def test_split_block_time_extremes(bounded_run):
    f, tr, seq = bounded_run
    for b in seq.blocks[:20]:
        assert split_block_time(tr, f, b, math.inf) == (b.duration, 0)
        assert split_block_time(tr, f, b, 0.5) == (0, b.duration)
        below, above = split_block_time(tr, f, b, 1.9)
        assert below == b.time_below_threshold and below + above == b.duration


def test_trap_flags_definitions():
    assert trap_flags(2e4, 3.0, 1e4, 0.3) == (True, True, False)
    assert trap_flags(2e4, 20.0, 1e4, 0.3) == (True, False, True)
    assert trap_flags(50.0, 20.0, 1e4, 0.3) == (False, False, False)


def test_classify_traps_single_and_several():
    tr = straight(60)
    f = unit_field(K=2.0, overrides={LatticeEdge((10, 0), (10, 1)): 2e4})
    blk = detect_regenerations(tr, f, RegenConfig(margin=10))
    b = next(b for b in blk.blocks if b.max_conductance >= 1e4)
    one = classify_traps([b], 1e4, 0.3)[0]
    assert one.LT and one.OLT and not one.SLT
    g = unit_field(K=2.0, overrides={LatticeEdge((10, 0), (10, 1)): 2e4, LatticeEdge((11, 0), (11, -1)): 30.0})
    b2 = next(b for b in detect_regenerations(tr, g, RegenConfig(margin=10)).blocks if b.max_conductance >= 1e4)
    two = classify_traps([b2], 1e4, 0.3)[0]
    assert two.LT and two.SLT and not two.OLT
    assert two.nlt == 2


def test_classify_rejects_bad_delta(bounded_run):
    with pytest.raises(ValueError):
        classify_traps(bounded_run[2].blocks, 1e4, 1.5)


def test_blocks_csv_round_trip(bounded_run, tmp_path):
    blocks = bounded_run[2].blocks
    p = tmp_path / "b.csv"
    write_blocks_csv(blocks, p)
    assert read_blocks_csv(p) == blocks
    write_blocks_csv(blocks, p, [{"master_seed": 5}] * len(blocks))
    assert read_blocks_csv(p) == blocks
