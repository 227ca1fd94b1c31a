"""Quenched walk X and enhanced walk (X, Z) in a conductance field."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence, Tuple

import numpy as np

from . import _core
from .env import ConductanceField

LEVEL_EPS = 1e-9


@dataclass
class TransitionKernel:
    """Kernel at one vertex; index j < d is +e_j, j >= d is -e_{j-d}."""

    x: Tuple[int, ...]
    p: np.ndarray
    pK: np.ndarray
    cstar: np.ndarray
    log_pi: float  # log pi(x) in absolute normalization

    def prob(self, y) -> float:
        return float(self.p[_direction_index(self.x, y)])

    def probK(self, y) -> float:
        return float(self.pK[_direction_index(self.x, y)])


def _direction_index(x, y) -> int:
    d = len(x)
    diff = [b - a for a, b in zip(x, y)]
    for i, v in enumerate(diff):
        if v == 1:
            return i
        if v == -1:
            return d + i
    raise ValueError("not a neighbour")


def kernel_at(field: ConductanceField, x) -> TransitionKernel:
    """p and p_K at x from relative weights c_*(x, x+e_j) exp(e_j . l)."""
    x = tuple(int(v) for v in x)
    cs = field.incident(x)
    p = np.empty_like(cs)
    pk = np.empty_like(cs)
    _core.kernel_from(cs, field.expw, field.K, p, pk)
    log_pi = 2.0 * float(np.dot(x, field.ell)) + math.log(float(np.dot(cs, field.expw)))
    return TransitionKernel(x, p, pk, cs, log_pi)


def default_margin(direction: Sequence[float]) -> int:
    """ceil(30 / smallest positive e_j . l), in lattice steps of level."""
    pos = [v for v in direction if v > 1e-12]
    return int(math.ceil(30.0 / min(pos) - 1e-12))


def margin_level(direction: Sequence[float], margin: int) -> float:
    pos = [v for v in direction if v > 1e-12]
    return margin * min(pos)


@dataclass
class WalkRng:
    """Counter-based stream: draw number k is a pure function of (seed, k)."""

    seed: int
    counter: int = 0

    def __post_init__(self):
        self.seed = int(self.seed) & 0xFFFFFFFFFFFFFFFF
        self._useed = np.uint64(self.seed)

    def next_uniform(self) -> float:
        u = _core.stream_draw(self._useed, _core.STREAM_STEP, np.uint64(self.counter))
        self.counter += 1
        return float(u)


def step_enhanced(field: ConductanceField, state, rng: WalkRng):
    """One step of the enhanced walk; the incoming z bit is ignored."""
    x, _z = state
    ker = kernel_at(field, x)
    j, z = _core.sample_step(ker.p, ker.pK, rng.next_uniform())
    y = list(x)
    d = field.dimension
    if j < d:
        y[j] += 1
    else:
        y[j - d] -= 1
    return tuple(y), int(z)


def ladder_times(levels: np.ndarray) -> np.ndarray:
    """W_0 = 0, W_{k+1} = first n with level[n] > level[W_k]."""
    out = [0]
    best = levels[0]
    for n in range(1, len(levels)):
        if levels[n] > best + LEVEL_EPS:
            out.append(n)
            best = levels[n]
    return np.asarray(out, dtype=np.int64)


@dataclass
class EnhancedTrajectory:
    positions: np.ndarray  # (N+1, d) int64
    zbits: np.ndarray  # (N+1,) uint8; zbits[0] is the unused initial bit
    direction: np.ndarray
    levels: np.ndarray = dc_field(init=False)
    _ladder: Optional[np.ndarray] = dc_field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.int64)
        self.zbits = np.asarray(self.zbits, dtype=np.uint8)
        self.direction = np.asarray(self.direction, dtype=float)
        if self.positions.ndim != 2 or len(self.positions) != len(self.zbits) or len(self.positions) == 0:
            raise ValueError("positions and zbits must be nonempty with equal length")
        steps = np.abs(np.diff(self.positions, axis=0)).sum(axis=1)
        if np.any(steps != 1):
            raise ValueError("consecutive positions must be nearest neighbours")
        self.levels = self.positions @ self.direction

    @classmethod
    def from_steps(cls, start, steps, zbits, direction):
        """Build from a start vertex and a list of unit steps."""
        start = np.asarray(start, dtype=np.int64)
        pos = [start]
        for s in steps:
            pos.append(pos[-1] + np.asarray(s, dtype=np.int64))
        return cls(np.array(pos), np.asarray(zbits), direction)

    def __len__(self):
        return len(self.positions)

    @property
    def steps(self) -> int:
        return len(self.positions) - 1

    @property
    def ladder_times(self) -> np.ndarray:
        if self._ladder is None:
            self._ladder = ladder_times(self.levels)
        return self._ladder

    def shifted(self, t: int) -> "EnhancedTrajectory":
        return EnhancedTrajectory(self.positions[t:], self.zbits[t:], self.direction)

    def write_csv(self, path) -> None:
        d = self.positions.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n"] + [f"x_{i + 1}" for i in range(d)] + ["z", "level"])
            for n in range(len(self.positions)):
                w.writerow([n, *self.positions[n].tolist(), int(self.zbits[n]), repr(float(self.levels[n]))])


def run_walk(field: ConductanceField, start, steps: int, rng: WalkRng, z0: int = 1) -> EnhancedTrajectory:
    """Step-by-step enhanced trajectory; equal to ``steps`` calls of step_enhanced."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    start = np.asarray(start, dtype=np.int64)
    if start.shape != (field.dimension,):
        raise ValueError("start has the wrong dimension")
    if rng.counter != 0:
        raise ValueError("run_walk expects a fresh WalkRng")
    pos, zb = _core.run_walk_kernel(*field.core_args, field.expw, field.K, np.uint64(rng.seed), start,
                                    int(z0), int(steps))
    rng.counter += steps
    return EnhancedTrajectory(pos, zb, field.direction)


@dataclass
class DStatus:
    status: str  # "finite", "certified_infinite" or "censored"
    n: Optional[int] = None  # the value of D when finite
    margin: Optional[int] = None

    def __eq__(self, other):
        if isinstance(other, tuple):
            return (self.status, self.n if self.status == "finite" else self.margin) == other
        if isinstance(other, DStatus):
            return (self.status, self.n, self.margin) == (other.status, other.n, other.margin)
        return NotImplemented


def detect_D(traj: EnhancedTrajectory, start: int = 0, margin: Optional[int] = None) -> DStatus:
    """Evaluate D on the walk shifted to time ``start``.

    The margin is in lattice steps; the walk is declared D = infinity once its level
    exceeds the starting level by margin * min positive e_j . l without a violation.
    A trajectory may carry its own ``d_levels`` for these checks and a boolean
    ``excluded`` array marking times at a vertex that is no lattice point.
    """
    if margin is None:
        margin = default_margin(traj.direction)
    lvl = getattr(traj, "d_levels", traj.levels)
    excluded = getattr(traj, "excluded", None)
    pos = traj.positions
    z = traj.zbits
    x0 = pos[start]
    l0 = lvl[start]
    target = l0 + margin_level(traj.direction, margin)
    d = pos.shape[1]
    for t in range(start + 1, len(pos)):
        n = t - start
        if lvl[t] <= l0 + LEVEL_EPS:
            return DStatus("finite", n)
        if z[t] == 0:
            if n == 1:
                return DStatus("finite", 1)
            diff = pos[t - 1] - x0
            lattice = excluded is None or not excluded[t - 1]
            if lattice and diff.min() == 0 and diff.max() == 1 and diff.sum() == 1:
                return DStatus("finite", n)
        if lvl[t] >= target - LEVEL_EPS:
            return DStatus("certified_infinite", margin=margin)
    return DStatus("censored")
