"""Regeneration structure of explicit enhanced trajectories.

This module is the direct, readable implementation working on a stored
trajectory.  ``rwrc.engine`` computes the same blocks online for long runs; the
two are cross-checked in the test suite.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field as dc_field, asdict, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .env import ConductanceField, LatticeEdge
from .walk import LEVEL_EPS, EnhancedTrajectory, default_margin, detect_D

TOP_OBSERVED = 16


@dataclass(frozen=True)
class RegenConfig:
    alpha: Optional[float] = None  # default d + 4
    margin: Optional[int] = None  # default ceil(30 / min positive e_j . l)
    n_threshold: float = 1e4
    delta: float = 0.3

    def resolved(self, field: ConductanceField) -> "RegenConfig":
        alpha = self.alpha if self.alpha is not None else field.dimension + 4.0
        margin = self.margin if self.margin is not None else default_margin(field.direction)
        return RegenConfig(float(alpha), int(margin), float(self.n_threshold), float(self.delta))


def transverse_basis(direction: Sequence[float]) -> np.ndarray:
    """Rows f_2..f_d completing l into an orthonormal basis (Householder reflection)."""
    ell = np.asarray(direction, dtype=float)
    d = len(ell)
    e1 = np.zeros(d)
    e1[0] = 1.0
    v = ell - e1
    nv = float(v @ v)
    if nv < 1e-30:
        H = np.eye(d)
    else:
        H = np.eye(d) - 2.0 * np.outer(v, v) / nv
    return H[:, 1:].T.copy()


def chi_of(rel_positions: np.ndarray, direction, alpha: float) -> int:
    """Smallest integer m with all positions in the closed tilted box B(m, m^alpha)."""
    rel = np.asarray(rel_positions, dtype=float)
    a = float(np.max(np.abs(rel @ np.asarray(direction, float))))
    f = transverse_basis(direction)
    b = float(np.max(np.abs(rel @ f.T))) if f.size else 0.0
    return chi_from_extents(a, b, alpha)


def chi_from_extents(a: float, b: float, alpha: float) -> int:
    m1 = math.ceil(a - 1e-9)
    m2 = math.ceil(b ** (1.0 / alpha) - 1e-9) if b > 0 else 0
    m = max(m1, m2, 0)
    # guard against rounding in the root
    while m > 0 and (m - 1) >= a - 1e-9 and float(m - 1) ** alpha >= b - 1e-9:
        m -= 1
    while not (m >= a - 1e-9 and float(m) ** alpha >= b - 1e-9):
        m += 1
    return int(m)


@dataclass
class RegenBlock:
    index: int
    start_time: int
    end_time: int
    duration: int
    displacement: Tuple[int, ...]
    level_gain: float
    chi: int
    max_conductance: float
    max_edge: Optional[LatticeEdge]
    second_conductance: float
    pi_bar: float  # at the max edge
    time_on_max_edge: int
    trap_edge: Optional[LatticeEdge]  # e^(n) for the configured threshold
    trap_conductance: float
    visits_V: int
    trap_time: int
    trap_pi_bar: float
    trap_crossings: int
    time_below_threshold: int
    nlt: int
    observed_top: Tuple[float, ...]
    n_observed: int
    LT: bool = False
    OLT: bool = False
    SLT: bool = False
    certified: bool = True
    initial: bool = False
    replica: int = 0

    @property
    def W_n(self) -> float:
        if self.trap_edge is None:
            raise ValueError("block has no trap edge")
        return self.trap_time / self.trap_conductance

    def row(self) -> dict:
        d = asdict(self)
        d["displacement"] = " ".join(str(v) for v in self.displacement)
        d["max_edge"] = _edge_str(self.max_edge)
        d["trap_edge"] = _edge_str(self.trap_edge)
        d["observed_top"] = " ".join(repr(float(v)) for v in self.observed_top)
        for k, v in list(d.items()):
            if isinstance(v, float):
                d[k] = repr(v)
            elif isinstance(v, bool):
                d[k] = int(v)
        return d


def _edge_str(e: Optional[LatticeEdge]) -> str:
    if e is None:
        return ""
    return ";".join(",".join(str(v) for v in p) for p in (e.a, e.b))


def _parse_edge(s: str) -> Optional[LatticeEdge]:
    if not s:
        return None
    a, b = s.split(";")
    return LatticeEdge(tuple(int(v) for v in a.split(",")), tuple(int(v) for v in b.split(",")))


BLOCK_COLUMNS = [f.name for f in RegenBlock.__dataclass_fields__.values()]


def write_blocks_csv(blocks: Sequence[RegenBlock], path, provenance: Optional[Sequence[dict]] = None) -> None:
    """Write one row per block; ``provenance`` adds leading columns, one dict per block."""
    lead = list(provenance[0].keys()) if provenance else []
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=lead + BLOCK_COLUMNS)
        w.writeheader()
        for i, b in enumerate(blocks):
            row = dict(provenance[i]) if provenance else {}
            row.update(b.row())
            w.writerow(row)


def read_blocks_csv(path) -> List[RegenBlock]:
    out = []
    ints = {"index", "start_time", "end_time", "duration", "chi", "time_on_max_edge", "visits_V",
            "trap_time", "trap_crossings", "time_below_threshold", "nlt", "n_observed", "replica"}
    bools = {"LT", "OLT", "SLT", "certified", "initial"}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for k in BLOCK_COLUMNS:
                v = row[k]
                if k in ints:
                    kw[k] = int(v)
                elif k in bools:
                    kw[k] = bool(int(v))
                elif k == "displacement":
                    kw[k] = tuple(int(t) for t in v.split())
                elif k in ("max_edge", "trap_edge"):
                    kw[k] = _parse_edge(v)
                elif k == "observed_top":
                    kw[k] = tuple(float(t) for t in v.split())
                else:
                    kw[k] = float(v)
            out.append(RegenBlock(**kw))
    return out


@dataclass
class RegenSequence:
    blocks: List[RegenBlock]
    censored_tail: bool
    config: dict

    @property
    def times(self) -> List[int]:
        if not self.blocks:
            return []
        return [self.blocks[0].start_time] + [b.end_time for b in self.blocks]

    def regular(self) -> List[RegenBlock]:
        """Blocks between two regeneration times (the first block starts at time 0)."""
        return [b for b in self.blocks if not b.initial]


# -- candidates and the S/M/R iteration -------------------------------------------------------

def _open_pred(field: ConductanceField):
    cache: Dict[tuple, bool] = {}

    def is_open(v) -> bool:
        key = tuple(int(t) for t in v)
        r = cache.get(key)
        if r is None:
            cs = field.incident(key)
            r = cache[key] = bool(np.all((cs >= 1.0 / field.K) & (cs <= field.K)))
        return r

    return is_open


def find_Mcal(traj: EnhancedTrajectory, frm: int, field: ConductanceField, is_open=None) -> Optional[int]:
    """Smallest i >= 2 (relative to ``frm``) with X_i open, a double +e_1 step into X_i,
    and every level before i-2 strictly below the level at i-2.

    A trajectory may carry a boolean ``excluded`` array; times where it is set are
    never among X_i, X_{i-1}, X_{i-2}.
    """
    is_open = is_open or _open_pred(field)
    pos = traj.positions
    lvl = traj.levels
    excluded = getattr(traj, "excluded", None)
    best = -math.inf  # max level over [frm, frm+i-3]
    for i in range(2, len(pos) - frm):
        t = frm + i
        if i >= 3:
            best = max(best, lvl[t - 3])
        s1 = pos[t] - pos[t - 1]
        s2 = pos[t - 1] - pos[t - 2]
        if excluded is not None and (excluded[t] or excluded[t - 1] or excluded[t - 2]):
            continue
        if s1[0] == 1 and s2[0] == 1 and best < lvl[t - 2] - LEVEL_EPS and is_open(pos[t]):
            return i
    return None


def _first_regeneration(traj, s, field, cfg, is_open):
    """Absolute time of the first regeneration of the walk shifted to s, or None."""
    lvl = traj.levels
    N = len(lvl)
    M = lvl[s]
    while True:
        above = np.nonzero(lvl[s:] > M + LEVEL_EPS)[0]
        if above.size == 0:
            return None
        t_hit = s + int(above[0])
        rel = find_Mcal(traj, t_hit, field, is_open)
        if rel is None:
            return None
        S = t_hit + rel
        st = detect_D(traj, S, cfg.margin)
        if st.status == "certified_infinite":
            return S
        if st.status == "censored":
            return None
        R = S + st.n
        M = float(np.max(lvl[s:R + 1]))
        if R >= N - 1:
            return None


def regeneration_times(traj, field: ConductanceField, config: RegenConfig = RegenConfig()) -> List[int]:
    """0 followed by the certified regeneration times of the trajectory."""
    cfg = config.resolved(field)
    is_open = _open_pred(field)
    times = [0]
    while True:
        nxt = _first_regeneration(traj, times[-1], field, cfg, is_open)
        if nxt is None:
            return times
        times.append(nxt)


def detect_regenerations(traj: EnhancedTrajectory, field: ConductanceField,
                         config: RegenConfig = RegenConfig(), replica: int = 0) -> RegenSequence:
    """All certified regeneration blocks of a trajectory.

    Block 0 runs from time 0 to tau_1 and is flagged ``initial``; block k >= 1 runs
    from tau_k to tau_{k+1}.  The uncertified remainder of the trajectory is dropped.
    """
    cfg = config.resolved(field)
    times = regeneration_times(traj, field, cfg)
    blocks = []
    for k in range(len(times) - 1):
        blocks.append(block_statistics(traj, field, times[k], times[k + 1], cfg, index=k,
                                       initial=(k == 0), replica=replica))
    return RegenSequence(blocks, True, asdict(cfg))


# -- per-block statistics ----------------------------------------------------------------------

def _edges_at(v, d):
    for i in range(d):
        yield LatticeEdge.from_lower(v, i)
        w = list(v)
        w[i] -= 1
        yield LatticeEdge.from_lower(w, i)


def pi_bar_of(field: ConductanceField, e: LatticeEdge) -> float:
    """exp(-(e+ + e-).l) pi(x_e) of the collapsed edge, overflow-free."""
    d = field.dimension
    ell = field.ell
    base = np.add(e.a, e.b)
    tot = 0.0
    for u in (e.a, e.b):
        for f in _edges_at(u, d):
            if f == e:
                continue
            tot += field.c(f.lower, f.axis) * math.exp(float((np.add(f.a, f.b) - base) @ ell))
    return tot


def block_statistics(traj: EnhancedTrajectory, field: ConductanceField, s: int, S: int,
                     cfg: RegenConfig, index: int = 0, initial: bool = False, replica: int = 0) -> RegenBlock:
    d = field.dimension
    pos = [tuple(int(v) for v in p) for p in traj.positions[s:S + 1]]
    n_thr = cfg.n_threshold
    visits: Dict[tuple, int] = {}
    for v in pos[:-1]:
        visits[v] = visits.get(v, 0) + 1
    cond: Dict[LatticeEdge, float] = {}

    def c_of(e):
        r = cond.get(e)
        if r is None:
            r = cond[e] = field.c(e.lower, e.axis)
        return r

    # e^(n): first vertex in time order with an incident edge >= n; smallest such edge there
    trap = None
    for v in pos[:-1]:
        large = [e for e in _edges_at(v, d) if c_of(e) >= n_thr]
        if large:
            trap = min(large, key=lambda e: (e.a, e.b))
            break
    touched = set()
    for v in visits:
        touched.update(_edges_at(v, d))
    emax = min(touched, key=lambda e: (-c_of(e), e.a, e.b))
    cmax = c_of(emax)
    observed = set(touched)
    for u in (emax.a, emax.b):
        observed.update(_edges_at(u, d))
    rest = [c_of(e) for e in observed if e != emax]
    csecond = max(rest) if rest else 0.0
    top = tuple(sorted((c_of(e) for e in observed), reverse=True)[:TOP_OBSERVED])
    nlt = sum(1 for e in observed if c_of(e) >= n_thr ** cfg.delta)
    below = 0
    for a, b in zip(pos[:-1], pos[1:]):
        if c_of(LatticeEdge(a, b)) < n_thr:
            below += 1
    on_max = sum(1 for v in pos[:-1] if v in emax)
    V = T = cross = 0
    if trap is not None:
        for i in range(len(pos) - 1):
            a, b = pos[i], pos[i + 1]
            if a in trap:
                T += 1
            if a not in trap and b in trap:
                V += 1
            if a in trap and b in trap:
                cross += 1
    rel = np.asarray(pos, dtype=np.int64) - np.asarray(pos[0], dtype=np.int64)
    disp = tuple(int(v) for v in rel[-1])
    blk = RegenBlock(
        index=index, start_time=s, end_time=S, duration=S - s, displacement=disp,
        level_gain=float(traj.levels[S] - traj.levels[s]), chi=chi_of(rel, field.direction, cfg.alpha),
        max_conductance=cmax, max_edge=emax, second_conductance=csecond, pi_bar=pi_bar_of(field, emax),
        time_on_max_edge=on_max, trap_edge=trap, trap_conductance=c_of(trap) if trap else 0.0,
        visits_V=V, trap_time=T, trap_pi_bar=pi_bar_of(field, trap) if trap else 0.0,
        trap_crossings=cross, time_below_threshold=below, nlt=nlt, observed_top=top,
        n_observed=len(observed), initial=initial, replica=replica)
    blk.LT, blk.OLT, blk.SLT = trap_flags(cmax, csecond, n_thr, cfg.delta)
    return blk


def split_block_time(traj: EnhancedTrajectory, field: ConductanceField, block: RegenBlock,
                     t: float) -> Tuple[int, int]:
    """(steps crossing edges with c_* < t, steps crossing edges with c_* >= t) in the block."""
    if not block.certified:
        raise ValueError("block is not certified")
    pos = traj.positions[block.start_time:block.end_time + 1]
    below = 0
    for a, b in zip(pos[:-1], pos[1:]):
        e = LatticeEdge(tuple(a), tuple(b))
        if field.c(e.lower, e.axis) < t:
            below += 1
    return below, block.duration - below


def trap_flags(c_max: float, c_second: float, n: float, delta: float) -> Tuple[bool, bool, bool]:
    """(LT, OLT, SLT) from the largest and second largest observed conductance."""
    lt = c_max >= n
    olt = lt and c_second < n ** delta
    return lt, olt, lt and not olt


def classify_traps(blocks: Iterable[RegenBlock], n: float, delta: float) -> List[RegenBlock]:
    """Recompute LT / OLT / SLT / NLT from the stored observed-edge summary.

    The observed set is the edges incident to visited vertices plus the edges
    adjacent to the max edge.  NLT is exact while fewer than the stored number of
    top conductances reach n^delta and a lower bound otherwise.
    """
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must lie in (0, 1)")
    small = n ** delta
    out = []
    for b in blocks:
        lt, olt, slt = trap_flags(b.max_conductance, b.second_conductance, n, delta)
        out.append(replace(b, LT=lt, OLT=olt, SLT=slt,
                           nlt=sum(1 for c in b.observed_top if c >= small)))
    return out


def sequence_summary(seq_blocks: Sequence[RegenBlock]) -> dict:
    reg = [b for b in seq_blocks if not b.initial]
    return {"blocks": len(seq_blocks), "regular_blocks": len(reg),
            "lt_blocks": sum(b.LT for b in reg), "olt_blocks": sum(b.OLT for b in reg),
            "slt_blocks": sum(b.SLT for b in reg)}
