"""Long-run driver around the compiled streaming walker."""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import List, Optional, Sequence

import numpy as np

from . import _engine as E
from .env import ConductanceField, LatticeEdge
from .regen import (TOP_OBSERVED, RegenBlock, RegenConfig, chi_from_extents, trap_flags,
                    transverse_basis)
from .walk import margin_level

assert TOP_OBSERVED == E.N_TOP

MAX_TIME = 2 ** 62


@dataclass
class StreamResult:
    blocks: List[RegenBlock]
    checkpoints: np.ndarray  # requested times
    checkpoint_positions: np.ndarray  # (C, d); rows past the final time are unset
    final_time: int
    final_position: np.ndarray
    stop_reason: str  # "horizon" or "blocks"
    excursions_skipped: int = 0
    steps_skipped: int = 0
    explicit_steps: int = 0
    candidates: int = 0
    config: dict = dc_field(default_factory=dict)


class StreamingWalker:
    """Enhanced walk started at ``start`` with online regeneration detection.

    ``skip_threshold`` enables exact excursion jumping on edges with c_* at or above
    it; it must exceed K so that the endpoints of skipped edges are closed.  Use
    ``math.inf`` for plain step-by-step dynamics, which reproduce run_walk exactly.
    """

    def __init__(self, field: ConductanceField, walk_seed: int, config: RegenConfig = RegenConfig(),
                 start: Optional[Sequence[int]] = None, skip_threshold: Optional[float] = None,
                 checkpoints: Optional[Sequence[int]] = None, replica: int = 0,
                 block_rows: int = 4096, run_capacity: int = 1 << 14, max_depth: int = 64):
        d = field.dimension
        self.field = field
        self.cfg = config.resolved(field)
        if skip_threshold is None:
            skip_threshold = max(10.0 * field.K, 100.0)
        if not skip_threshold > field.K:
            raise ValueError("skip_threshold must exceed K")
        self.skip_threshold = float(skip_threshold)
        self.walk_seed = int(walk_seed) & 0xFFFFFFFFFFFFFFFF
        self.replica = replica
        start = np.zeros(d, dtype=np.int64) if start is None else np.asarray(start, dtype=np.int64)
        self.x = start.copy()
        self.start = start.copy()
        self.ist = np.zeros(E.N_ISTATE, dtype=np.int64)
        self.ring_pos = np.zeros((4, d), dtype=np.int64)
        self.ring_lvl = np.zeros(4)
        self.ring_pos[0] = start
        self.ring_lvl[0] = float(start @ field.direction)
        self.mi = np.zeros((max_depth, 4 + d), dtype=np.int64)
        self.mf = np.zeros((max_depth, 4))
        self.mi[0, 0] = E.WAIT
        self.mf[0, 0] = self.ring_lvl[0]
        self.mf[0, 1] = self.ring_lvl[0]
        self.ist[E.I_DEPTH] = 1
        self.rdir = np.zeros(run_capacity, dtype=np.int64)
        self.rcnt = np.zeros(run_capacity, dtype=np.int64)
        self.rstart_pos = start.copy()
        self.out_i = np.zeros((block_rows, E.n_icols(d)), dtype=np.int64)
        self.out_f = np.zeros((block_rows, E.N_FCOLS))
        self.out_top = np.zeros((block_rows, E.N_TOP))
        ck = np.unique(np.asarray(checkpoints if checkpoints is not None else [], dtype=np.int64))
        if ck.size and ck[0] < 0:
            raise ValueError("checkpoints must be non-negative")
        self.ck_times = ck
        self.ck_pos = np.zeros((len(ck), d), dtype=np.int64)
        while self.ist[E.I_CKI] < len(ck) and ck[self.ist[E.I_CKI]] == 0:
            self.ck_pos[self.ist[E.I_CKI]] = start
            self.ist[E.I_CKI] += 1
        self.fbasis = transverse_basis(field.direction)
        self.margin_lvl = margin_level(field.direction, self.cfg.margin)
        self.blocks: List[RegenBlock] = []

    @property
    def time(self) -> int:
        return int(self.ist[E.I_T])

    def run(self, horizon: Optional[int] = None, max_blocks: Optional[int] = None) -> StreamResult:
        """Advance until ``horizon`` steps or ``max_blocks`` certified blocks (block 0 included)."""
        if horizon is None and max_blocks is None:
            raise ValueError("give a horizon or a block target")
        hz = MAX_TIME if horizon is None else int(horizon)
        mb = -1 if max_blocks is None else int(max_blocks)
        f = self.field
        seed, kind, lp, okeys, ovals = f.core_args
        small = self.cfg.n_threshold ** self.cfg.delta
        while True:
            code = E.stream(seed, kind, lp, okeys, ovals, f.expw, f.K, f.ell, f.direction, self.fbasis,
                            np.uint64(self.walk_seed), self.skip_threshold, self.margin_lvl,
                            self.cfg.n_threshold, small, hz, mb, self.ist, self.x, self.ring_pos,
                            self.ring_lvl, self.mi, self.mf, self.rdir, self.rcnt, self.rstart_pos,
                            self.out_i, self.out_f, self.out_top, self.ck_times, self.ck_pos)
            self._drain()
            if code == -1:
                raise RuntimeError(f"streaming walker internal error {int(self.ist[E.I_ERR])}")
            if code == 3:
                self.rdir = np.concatenate([self.rdir, np.zeros_like(self.rdir)])
                self.rcnt = np.concatenate([self.rcnt, np.zeros_like(self.rcnt)])
                continue
            if code == 2:
                continue
            break
        if hz >= MAX_TIME and code == 0:
            raise RuntimeError("time counter exhausted")
        return StreamResult(list(self.blocks), self.ck_times, self.ck_pos.copy(), self.time, self.x.copy(),
                            "horizon" if code == 0 else "blocks",
                            int(self.ist[E.I_RUNS]), int(self.ist[E.I_SKIPPED]),
                            int(self.ist[E.I_STEPS]), int(self.ist[E.I_CANDS]),
                            {"skip_threshold": self.skip_threshold, **self.cfg.__dict__})

    def _drain(self):
        n = int(self.ist[E.I_NOUT])
        d = self.field.dimension
        cfg = self.cfg
        for r in range(n):
            oi = self.out_i[r]
            of = self.out_f[r]
            if oi[E.O_OVERFLOW]:
                raise RuntimeError("block too large for the edge key packing")
            idx = len(self.blocks)
            disp = tuple(int(v) for v in oi[E.O_FIXED:E.O_FIXED + d])
            base = E.O_FIXED + d
            medge = LatticeEdge.from_lower(oi[base:base + d].tolist(), int(oi[base + d]))
            trap = None
            if oi[E.O_HASTRAP]:
                b2 = base + d + 1
                trap = LatticeEdge.from_lower(oi[b2:b2 + d].tolist(), int(oi[b2 + d]))
            lt, olt, slt = trap_flags(float(of[E.F_CMAX]), float(of[E.F_CSECOND]), cfg.n_threshold, cfg.delta)
            top = tuple(float(v) for v in self.out_top[r] if v > 0)
            self.blocks.append(RegenBlock(
                index=idx, start_time=int(oi[E.O_START]), end_time=int(oi[E.O_END]),
                duration=int(oi[E.O_END] - oi[E.O_START]), displacement=disp,
                level_gain=float(of[E.F_GAIN]),
                chi=chi_from_extents(float(of[E.F_EXT_L]), float(of[E.F_EXT_F]), cfg.alpha),
                max_conductance=float(of[E.F_CMAX]), max_edge=medge,
                second_conductance=float(of[E.F_CSECOND]), pi_bar=float(of[E.F_PIBAR]),
                time_on_max_edge=int(oi[E.O_ONMAX]), trap_edge=trap,
                trap_conductance=float(of[E.F_TRAPC]), visits_V=int(oi[E.O_V]),
                trap_time=int(oi[E.O_T]), trap_pi_bar=float(of[E.F_TRAPPIBAR]),
                trap_crossings=int(oi[E.O_CROSS]), time_below_threshold=int(oi[E.O_BELOW]),
                nlt=int(oi[E.O_NLT]), observed_top=top, n_observed=int(oi[E.O_NOBS]),
                LT=lt, OLT=olt, SLT=slt, initial=(idx == 0), replica=self.replica))
        self.ist[E.I_NOUT] = 0
