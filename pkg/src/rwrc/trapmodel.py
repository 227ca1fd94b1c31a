"""Single-trap analysis: collapsed edges, exit laws, half-excursions and coupling.

A strong edge e = {e-, e+} (e- the lower endpoint) is collapsed to one vertex x_e.
Relative weights are used throughout: an edge e' touching e carries
c_*(e') exp((e'+ + e'- - e+ - e-) . l), the tilted conductance divided by the
common factor exp((e+ + e-) . l).  In this normalization the weight of e itself is
c_*(e) and pi(x_e) = pi(e+) + pi(e-) - 2 c(e) is the sum of the 2(2d - 1)
surrounding weights.

Two walks live on the collapsed graph.  The trace X^e of the original walk
leaves x_e according to the exact exit law of the edge, which depends on the
endpoint through which it entered.  Y^e leaves x_e with probabilities
c(y, x_e) / pi(x_e).  ``run_coupled`` drives both with common randomness and the
maximal-agreement rule at x_e.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numba import njit

from . import _core
from ._core import (STREAM_COUPLE, STREAM_COUPLE_B, STREAM_EXIT, conductance, draw, incident,
                    kernel_from, sample_step, stream_seed)
from .env import ConductanceField, LatticeEdge
from .regen import RegenBlock, RegenConfig, regeneration_times

MODE_COUPLED = 0
MODE_WEIGHTED = 1
MODE_DIRECT_X = 2
MODE_DIRECT_Y = 3


# -- closed forms ------------------------------------------------------------------------------

def _check_sides(adj_plus, adj_minus):
    a = np.asarray(adj_plus, dtype=float)
    b = np.asarray(adj_minus, dtype=float)
    if a.ndim != 1 or a.shape != b.shape or len(a) % 2 == 0:
        raise ValueError("each side needs the same odd number 2d - 1 of adjacent weights")
    if np.any(a <= 0) or np.any(b <= 0) or not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("adjacent weights must be positive and finite")
    return a, b


def exact_exit_distribution(c_e: float, adj_plus: Sequence[float], adj_minus: Sequence[float],
                            start: str = "plus") -> np.ndarray:
    """Law of the first vertex off the edge, ordered plus-side exits then minus-side exits."""
    a, b = _check_sides(adj_plus, adj_minus)
    if not c_e > 0:
        raise ValueError("edge conductance must be positive")
    if start not in ("plus", "minus"):
        raise ValueError("start must be 'plus' or 'minus'")
    A, B = a.sum(), b.sum()
    pi_p, pi_m = c_e + A, c_e + B
    # 1 - p p' = (c (A + B) + A B) / (pi+ pi-), written without cancellation
    denom = (c_e * (A + B) + A * B) / (pi_p * pi_m)
    if start == "plus":
        same, other = a / pi_p / denom, b / pi_m * (c_e / pi_p) / denom
        return np.concatenate([same, other])
    same, other = b / pi_m / denom, a / pi_p * (c_e / pi_m) / denom
    return np.concatenate([other, same])


def half_excursion_geometric_param(c_e: float, pi_plus: float, pi_minus: float) -> float:
    """q = 1 - c_e^2 / (pi+ pi-): success parameter of the number of round trips."""
    if not (0 < c_e < min(pi_plus, pi_minus)):
        raise ValueError("need 0 < c_e < min(pi_plus, pi_minus)")
    return 1.0 - c_e * c_e / (pi_plus * pi_minus)


def collapsed_exit_distribution(adj_plus: Sequence[float], adj_minus: Sequence[float]) -> np.ndarray:
    a, b = _check_sides(adj_plus, adj_minus)
    w = np.concatenate([a, b])
    return w / w.sum()


def sandwich_constant(c_e: float, adj_plus, adj_minus, n: float, delta: float) -> float:
    """Smallest C with every exact exit probability within (1 +- C n^(delta-1)) of the collapsed one."""
    ref = collapsed_exit_distribution(adj_plus, adj_minus)
    worst = 0.0
    for start in ("plus", "minus"):
        ex = exact_exit_distribution(c_e, adj_plus, adj_minus, start)
        worst = max(worst, float(np.max(np.abs(ex / ref - 1.0))))
    return worst / n ** (delta - 1.0)


# -- collapsed patch ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CollapsedPatch:
    """The edge e collapsed to x_e, with its 2(2d - 1) exits and their relative weights.

    Exits are ordered plus side (around e+, the upper endpoint) first; every step
    out of x_e carries z = 0.
    """

    base_edge: LatticeEdge
    c_e: float
    exits: Tuple[Tuple[int, ...], ...]
    exit_side: Tuple[str, ...]
    weights: Tuple[float, ...]
    pi_xe: float

    @property
    def plus(self):
        return self.base_edge.b

    @property
    def minus(self):
        return self.base_edge.a

    def collapsed_law(self) -> np.ndarray:
        return np.asarray(self.weights) / self.pi_xe

    def exit_law(self, entry: str) -> np.ndarray:
        k = len(self.weights) // 2
        return exact_exit_distribution(self.c_e, self.weights[:k], self.weights[k:], entry)

    def geometric_param(self) -> float:
        k = len(self.weights) // 2
        return half_excursion_geometric_param(self.c_e, self.c_e + sum(self.weights[:k]),
                                              self.c_e + sum(self.weights[k:]))

    def level(self, direction, convention: str) -> float:
        """x_e . l_dir: the smaller endpoint level for D-type checks, the larger for M-type."""
        la = float(np.dot(self.minus, direction))
        lb = float(np.dot(self.plus, direction))
        if convention == "D":
            return min(la, lb)
        if convention == "M":
            return max(la, lb)
        raise ValueError("convention must be 'D' or 'M'")


def collapse(field: ConductanceField, e: LatticeEdge) -> CollapsedPatch:
    d = field.dimension
    ell = field.ell
    base = np.add(e.a, e.b)
    exits, sides, weights = [], [], []
    for side, u in (("plus", e.b), ("minus", e.a)):
        cs = field.incident(u)
        for j in range(2 * d):
            y = list(u)
            if j < d:
                y[j] += 1
            else:
                y[j - d] -= 1
            if tuple(y) in e:
                continue
            exits.append(tuple(y))
            sides.append(side)
            weights.append(float(cs[j]) * math.exp(float((np.add(u, y) - base) @ ell)))
    return CollapsedPatch(e, field.c(e.lower, e.axis), tuple(exits), tuple(sides), tuple(weights),
                          float(sum(weights)))


# -- excursions --------------------------------------------------------------------------------

@dataclass(frozen=True)
class ExcursionRecord:
    entry_vertex: object
    exit_vertex: object
    steps_inside: int  # T^ex: steps from entry until the first vertex off the edge, exit step included
    half_crossings: int  # complete round trips across the edge, floor((T^ex - 1) / 2)


@dataclass
class ExcursionSample:
    steps_inside: np.ndarray
    exit_index: np.ndarray  # into the plus-then-minus exit list
    start: str

    @property
    def half_crossings(self) -> np.ndarray:
        return (self.steps_inside - 1) // 2

    def records(self, exits: Optional[Sequence] = None, entry=None) -> List[ExcursionRecord]:
        ex = list(range(int(self.exit_index.max()) + 1)) if exits is None else list(exits)
        ent = self.start if entry is None else entry
        return [ExcursionRecord(ent, ex[int(k)], int(t), int((t - 1) // 2))
                for t, k in zip(self.steps_inside, self.exit_index)]


def simulate_excursions(c_e: float, adj_plus: Sequence[float], adj_minus: Sequence[float], n: int,
                        seed: int = 0, start: str = "plus") -> ExcursionSample:
    """Run n excursions of the walk on a single edge step by step until it leaves."""
    a, b = _check_sides(adj_plus, adj_minus)
    rng = np.random.Generator(np.random.PCG64(seed))
    k = len(a)
    p_cross = np.array([c_e / (c_e + a.sum()), c_e / (c_e + b.sum())])
    cum = [np.cumsum(a) / a.sum(), np.cumsum(b) / b.sum()]
    side = np.full(n, 0 if start == "plus" else 1)
    steps = np.zeros(n, dtype=np.int64)
    exit_idx = np.full(n, -1, dtype=np.int64)
    active = np.arange(n)
    while active.size:
        steps[active] += 1
        u = rng.random(active.size)
        cross = u < p_cross[side[active]]
        side[active[cross]] ^= 1
        leaving = active[~cross]
        v = rng.random(leaving.size)
        for s in (0, 1):
            sel = side[leaving] == s
            idx = np.minimum(np.searchsorted(cum[s], v[sel], side="right"), k - 1)
            exit_idx[leaving[sel]] = idx + s * k
        active = active[cross]
    return ExcursionSample(steps, exit_idx, start)


def sample_edge_excursion(field: ConductanceField, e: LatticeEdge, entry, seed: int = 0) -> ExcursionRecord:
    """One excursion on a field edge entered at ``entry``, with the real transition kernel."""
    patch = collapse(field, e)
    k = len(patch.weights) // 2
    start = "plus" if tuple(entry) == patch.plus else "minus"
    if tuple(entry) not in e:
        raise ValueError("entry must be an endpoint of the edge")
    s = simulate_excursions(patch.c_e, patch.weights[:k], patch.weights[k:], 1, seed, start)
    return s.records(patch.exits, tuple(entry))[0]


# -- coupled walks on the collapsed graph ------------------------------------------------------

@njit(cache=True)
def _exit_tables(seed, kind, lp, okeys, ovals, ell, ea, eb, axis, ys, w):
    """Exits of x_e (plus side first) and relative weights; returns c_*(e)."""
    d = ea.shape[0]
    cs = np.empty(2 * d)
    k = 0
    for side in range(2):
        u = eb if side == 0 else ea
        incident(seed, kind, lp, okeys, ovals, u, cs)
        for j in range(2 * d):
            if side == 0 and j == axis + d:
                continue
            if side == 1 and j == axis:
                continue
            ex = 0.0
            for c in range(d):
                ys[k, c] = u[c]
            if j < d:
                ys[k, j] += 1
            else:
                ys[k, j - d] -= 1
            for c in range(d):
                ex += (u[c] + ys[k, c] - ea[c] - eb[c]) * ell[c]
            w[k] = cs[j] * math.exp(ex)
            k += 1
    return conductance(seed, kind, lp, okeys, ovals, ea, axis)


@njit(cache=True)
def _pick(cum_w, u):
    for i in range(cum_w.shape[0]):
        if u <= cum_w[i]:
            return i
    return cum_w.shape[0] - 1


@njit(cache=True)
def _which(x, ea, eb):
    """0 if x = e+, 1 if x = e-, -1 otherwise."""
    d = x.shape[0]
    isa = True
    isb = True
    for c in range(d):
        if x[c] != ea[c]:
            isa = False
        if x[c] != eb[c]:
            isb = False
    if isb:
        return 0
    if isa:
        return 1
    return -1


@njit(cache=True)
def _choose(probs, u):
    acc = 0.0
    last = 0
    for i in range(probs.shape[0]):
        if probs[i] > 0.0:
            last = i
        acc += probs[i]
        if u <= acc:
            return i
    return last


@njit(cache=True)
def _coupled_kernel(seed, kind, lp, okeys, ovals, expw, K, ell, ea, eb, axis, start, start_side,
                    horizon, wseed, mode):
    """Trace walk X^e and collapsed walk Y^e for ``horizon`` collapsed-graph steps.

    start_side is 0 (start at x_e entered from e+), 1 (entered from e-) or -1 (start
    at ``start`` off the edge).  Returns positions and flags of both walks, their z
    bits, the X clock (original time), the decoupling index, T_e and the weight.
    """
    d = ea.shape[0]
    m = 2 * (2 * d - 1)
    half = m // 2
    ys = np.empty((m, d), dtype=np.int64)
    w = np.empty(m)
    c_e = _exit_tables(seed, kind, lp, okeys, ovals, ell, ea, eb, axis, ys, w)
    A = 0.0
    B = 0.0
    for i in range(half):
        A += w[i]
        B += w[half + i]
    pi_p = c_e + A
    pi_m = c_e + B
    denom = (c_e * (A + B) + A * B) / (pi_p * pi_m)
    px = np.empty((2, m))
    for i in range(half):
        px[0, i] = w[i] / pi_p / denom
        px[0, half + i] = w[half + i] / pi_m * (c_e / pi_p) / denom
        px[1, i] = w[i] / pi_p * (c_e / pi_m) / denom
        px[1, half + i] = w[half + i] / pi_m / denom
    py = w / (A + B)
    mins = np.empty((2, m))
    agree = np.zeros(2)
    for s in range(2):
        for i in range(m):
            mins[s, i] = min(px[s, i], py[i])
            agree[s] += mins[s, i]
    qgeo = 1.0 - (c_e / pi_p) * (c_e / pi_m)

    xs = np.zeros((horizon + 1, d), dtype=np.int64)
    yp = np.zeros((horizon + 1, d), dtype=np.int64)
    xf = np.zeros(horizon + 1, dtype=np.int8)  # -1 off x_e, else entry side of X
    yf = np.zeros(horizon + 1, dtype=np.int8)
    zx = np.zeros(horizon + 1, dtype=np.uint8)
    zy = np.zeros(horizon + 1, dtype=np.uint8)
    xclock = np.zeros(horizon + 1, dtype=np.int64)
    ssa = stream_seed(wseed, STREAM_COUPLE)
    ssb = stream_seed(wseed, STREAM_COUPLE_B)
    sse = stream_seed(wseed, STREAM_EXIT)
    cs = np.empty(2 * d)
    p = np.empty(2 * d)
    pk = np.empty(2 * d)
    resid = np.empty(m)
    xpos = start.copy()
    ypos = start.copy()
    xside = start_side
    yside = start_side
    if start_side >= 0:
        xpos[:] = eb if start_side == 0 else ea
        ypos[:] = xpos
    xs[0] = xpos
    yp[0] = ypos
    xf[0] = xside
    yf[0] = yside
    decouple = -1
    t_e = 0 if start_side >= 0 else -1
    weight = 1.0
    xt = 0
    rt = np.int64(0)  # counter of the original-time stream in direct X mode
    coupled = mode == MODE_COUPLED or mode == MODE_WEIGHTED
    for k in range(horizon):
        together = coupled and decouple < 0
        # ---- X (or the common walk) ----
        if mode != MODE_DIRECT_Y:
            if xside < 0:
                incident(seed, kind, lp, okeys, ovals, xpos, cs)
                kernel_from(cs, expw, K, p, pk)
                u = draw(ssa, 3 * k) if mode != MODE_DIRECT_X else draw(ssa, rt)
                rt += 1
                j, z = sample_step(p, pk, u)
                if j < d:
                    xpos[j] += 1
                else:
                    xpos[j - d] -= 1
                xside = _which(xpos, ea, eb)
                zx[k + 1] = z
                xt += 1
            elif mode == MODE_DIRECT_X:
                # walk the original chain inside the edge until it leaves
                cur = xside
                while True:
                    u = draw(ssa, rt)
                    rt += 1
                    pc = c_e / (pi_p if cur == 0 else pi_m)
                    xt += 1
                    if u < pc:
                        cur = 1 - cur
                        continue
                    v = (u - pc) / (1.0 - pc)
                    acc = 0.0
                    sel = half * cur + half - 1
                    tot = A if cur == 0 else B
                    for i in range(half):
                        acc += w[half * cur + i] / tot
                        if v <= acc:
                            sel = half * cur + i
                            break
                    xpos[:] = ys[sel]
                    break
                xside = _which(xpos, ea, eb)
                zx[k + 1] = 0
            else:
                u = draw(ssa, 3 * k)
                if together and mode == MODE_WEIGHTED:
                    weight *= agree[xside]
                    sel = _choose(mins[xside] / agree[xside], u)
                    ypos[:] = ys[sel]
                    yside = _which(ypos, ea, eb)
                    zy[k + 1] = 0
                elif together:
                    if u <= agree[xside]:
                        sel = _choose(mins[xside], u)
                        ypos[:] = ys[sel]
                        yside = _which(ypos, ea, eb)
                        zy[k + 1] = 0
                    else:
                        r = 1.0 - agree[xside]
                        for i in range(m):
                            resid[i] = (px[xside, i] - mins[xside, i]) / r
                        sel = _choose(resid, draw(ssa, 3 * k + 1))
                        for i in range(m):
                            resid[i] = (py[i] - mins[xside, i]) / r
                        sy = _choose(resid, draw(ssa, 3 * k + 2))
                        ypos[:] = ys[sy]
                        yside = _which(ypos, ea, eb)
                        zy[k + 1] = 0
                        decouple = k + 1
                else:
                    sel = _choose(px[xside], u)
                # time inside the edge: round trips are geometric and independent of the exit
                g = 0.0
                if qgeo < 1.0:
                    g = math.floor(math.log(draw(sse, k)) / math.log1p(-qgeo))
                far_side = (sel >= half) != (xside == 1)
                xt += 1 + 2 * np.int64(g) + (1 if far_side else 0)
                xpos[:] = ys[sel]
                xside = _which(xpos, ea, eb)
                zx[k + 1] = 0
        # ---- Y ----
        if mode == MODE_DIRECT_Y or (coupled and not together):
            ssy = ssa if mode == MODE_DIRECT_Y else ssb
            if yside < 0:
                incident(seed, kind, lp, okeys, ovals, ypos, cs)
                kernel_from(cs, expw, K, p, pk)
                j, z = sample_step(p, pk, draw(ssy, 3 * k))
                if j < d:
                    ypos[j] += 1
                else:
                    ypos[j - d] -= 1
                yside = _which(ypos, ea, eb)
                zy[k + 1] = z
            else:
                sel = _choose(py, draw(ssy, 3 * k))
                ypos[:] = ys[sel]
                yside = _which(ypos, ea, eb)
                zy[k + 1] = 0
        elif together and yf[k] < 0:
            # off x_e both walks take the same step
            ypos[:] = xpos
            yside = xside
            zy[k + 1] = zx[k + 1]
        xs[k + 1] = xpos
        xf[k + 1] = xside
        yp[k + 1] = ypos
        yf[k + 1] = yside
        xclock[k + 1] = xt
        if t_e < 0 and (xside >= 0 or yside >= 0):
            t_e = k + 1
    return xs, xf, yp, yf, zx, zy, xclock, decouple, t_e, weight


@dataclass
class CoupledRun:
    """Output of run_coupled.  ``*_at_xe`` holds the entry side (0 = e+, 1 = e-) or -1."""

    x_positions: np.ndarray
    x_at_xe: np.ndarray
    y_positions: np.ndarray
    y_at_xe: np.ndarray
    x_z: np.ndarray
    y_z: np.ndarray
    x_clock: np.ndarray  # original time elapsed by X at each collapsed step
    decoupling_time: Optional[int]
    T_e: Optional[int]
    agreement_weight: float

    def collapsed_x(self) -> np.ndarray:
        """X^e positions with both endpoints identified (x_e recorded as the lower endpoint)."""
        return self.x_positions

    def exit_sequence(self, which: str = "x") -> np.ndarray:
        """Collapsed-graph vertices right after each departure from x_e."""
        pos, flag = (self.x_positions, self.x_at_xe) if which == "x" else (self.y_positions, self.y_at_xe)
        idx = np.flatnonzero(flag[:-1] >= 0) + 1
        return pos[idx]


def _resolve_start(field, e, start, entry):
    if start is None:
        entry = "minus" if entry is None else entry
        return np.asarray(e.a, dtype=np.int64), (0 if entry == "plus" else 1)
    start = tuple(int(v) for v in start)
    if start in e:
        return np.asarray(start, dtype=np.int64), (0 if start == e.b else 1)
    return np.asarray(start, dtype=np.int64), -1


def _call(field, e, horizon, seed, start, entry, mode):
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if len(e.a) != field.dimension:
        raise ValueError("edge has the wrong dimension")
    st, side = _resolve_start(field, e, start, entry)
    return _coupled_kernel(*field.core_args, field.expw, field.K, field.ell,
                           np.asarray(e.a, dtype=np.int64), np.asarray(e.b, dtype=np.int64), e.axis,
                           st, side, int(horizon), np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF), mode)


def _wrap(out) -> CoupledRun:
    xs, xf, yp, yf, zx, zy, xc, dec, te, wt = out
    return CoupledRun(xs, xf, yp, yf, zx, zy, xc, None if dec < 0 else int(dec),
                      None if te < 0 else int(te), float(wt))


def run_coupled(field: ConductanceField, e: LatticeEdge, horizon: int, seed: int = 0,
                start: Optional[Sequence[int]] = None, entry: Optional[str] = None) -> CoupledRun:
    """Jointly sample X^e and Y^e under the maximal-agreement coupling.

    Off x_e the walks share every step.  At x_e the two exits agree on y with
    probability min(P_X(y), P_Y(y)); otherwise each exit is drawn from its own
    residual law and the walks continue independently.  ``start`` may be an
    endpoint of e (the walk then starts at x_e, entered there) or any other vertex.
    """
    return _wrap(_call(field, e, horizon, seed, start, entry, MODE_COUPLED))


def sample_trace_direct(field, e, horizon, seed=0, start=None, entry=None) -> CoupledRun:
    """X^e obtained by running the original walk step by step and erasing time inside e."""
    return _wrap(_call(field, e, horizon, seed, start, entry, MODE_DIRECT_X))


def sample_collapsed_direct(field, e, horizon, seed=0, start=None, entry=None) -> CoupledRun:
    """Y^e simulated on its own; results sit in the ``y_*`` fields."""
    return _wrap(_call(field, e, horizon, seed, start, entry, MODE_DIRECT_Y))


@dataclass
class CollapsedPath:
    """A walk on the collapsed graph in the form the regeneration search reads.

    Times at x_e are marked ``excluded``.  There x_e takes the larger endpoint
    level in ``levels`` (running maxima, candidate search) and the smaller one in
    ``d_levels`` (backtracking checks).
    """

    positions: np.ndarray
    zbits: np.ndarray
    direction: np.ndarray
    levels: np.ndarray
    d_levels: np.ndarray
    excluded: np.ndarray

    @classmethod
    def from_run(cls, run: "CoupledRun", field: ConductanceField, e: LatticeEdge, which: str = "y"):
        if which not in ("x", "y"):
            raise ValueError("which must be 'x' or 'y'")
        pos, flag, z = ((run.x_positions, run.x_at_xe, run.x_z) if which == "x"
                        else (run.y_positions, run.y_at_xe, run.y_z))
        ell = np.asarray(field.direction, dtype=float)
        ends = sorted((float(np.dot(e.a, ell)), float(np.dot(e.b, ell))))
        excluded = np.asarray(flag) >= 0
        lv = np.asarray(pos, dtype=float) @ ell
        hi, lo = lv.copy(), lv.copy()
        hi[excluded] = ends[1]
        lo[excluded] = ends[0]
        return cls(np.asarray(pos, dtype=np.int64), np.asarray(z, dtype=np.uint8), ell, hi, lo, excluded)


def collapsed_regeneration_times(run: "CoupledRun", field: ConductanceField, e: LatticeEdge,
                                 config: RegenConfig = RegenConfig(), which: str = "y") -> List[int]:
    """Regeneration times of a collapsed-graph walk; none of X_i, X_{i-1}, X_{i-2} may be x_e."""
    return regeneration_times(CollapsedPath.from_run(run, field, e, which), field, config)


def decoupling_probability(field: ConductanceField, e: LatticeEdge, horizon: int, trials: int,
                           seed: int = 0, start=None, entry=None) -> Tuple[float, float]:
    """P[coupled walks have split by ``horizon``] with its standard error.

    Each trial follows the common path conditioned to keep agreeing and records the
    product of agreement probabilities over its visits to x_e; one minus the mean
    product is unbiased for the split probability and has far lower variance than
    counting splits.
    """
    st, side = _resolve_start(field, e, start, entry)
    vals = np.empty(trials)
    ea = np.asarray(e.a, dtype=np.int64)
    eb = np.asarray(e.b, dtype=np.int64)
    for i in range(trials):
        s = np.uint64(_core.derive_seed(seed, i))
        out = _coupled_kernel(*field.core_args, field.expw, field.K, field.ell, ea, eb, e.axis, st, side,
                              int(horizon), s, MODE_WEIGHTED)
        vals[i] = 1.0 - out[9]
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0


def trap_fixture(n: float, delta: float, dimension: int = 2, bias_lambda: float = 1.0,
                 seed: int = 0) -> Tuple[ConductanceField, LatticeEdge]:
    """Field with c_*(e) = n on e = [0, e_1] and every other conductance uniform on [1, n^delta]."""
    from .env import ConductanceLaw
    hi = max(n ** delta, 1.0 + 1e-9)
    law = ConductanceLaw(0.5, "bounded", lo=1.0, hi=hi)
    origin = (0,) * dimension
    e = LatticeEdge.from_lower(origin, 0)
    return ConductanceField(law, seed=seed, dimension=dimension, bias_lambda=bias_lambda,
                            overrides={e: float(n)}), e


def decoupling_slope(n_values: Sequence[float], delta: float, trials: int, seed: int = 0,
                     dimension: int = 2, bias_lambda: float = 1.0):
    """Log-log slope of P[split before T_e + n^(2 delta)] against n, started on the trap."""
    probs = []
    for i, n in enumerate(n_values):
        field, e = trap_fixture(n, delta, dimension, bias_lambda, seed + i)
        horizon = int(math.ceil(n ** (2 * delta)))
        probs.append(decoupling_probability(field, e, horizon, trials, seed=seed * 1000 + i)[0])
    probs = np.asarray(probs)
    slope = float(np.polyfit(np.log(n_values), np.log(probs), 1)[0])
    return slope, probs


# -- trap observables --------------------------------------------------------------------------

@dataclass(frozen=True)
class TrapObservables:
    V_n: int
    pi_bar: float
    T_on_edge: int
    W_n: float
    W_infty_sample: float
    trap_conductance: float
    block_index: int = 0
    replica: int = 0


@njit(cache=True)
def _exp_sum(key, V):
    ss = stream_seed(key, _core.STREAM_WINF)
    tot = 0.0
    for i in range(V):
        tot += -2.0 * math.log(draw(ss, i))
    return tot


def w_infty_sample(V: int, pi_bar: float, key: int) -> float:
    """(1 / pi_bar) * sum of V independent 2 Exp(1) variables from a keyed stream."""
    return _exp_sum(np.uint64(int(key) & 0xFFFFFFFFFFFFFFFF), int(V)) / pi_bar


def block_key(seed: int, replica: int, index: int) -> int:
    return _core.derive_seed(seed, replica, index)


def collect_trap_observables(block: RegenBlock, n: float, seed: int = 0) -> TrapObservables:
    """V_n, pi_bar, time on e^(n), W_n and a W_infty draw for an LT(n) block."""
    if not block.max_conductance >= n:
        raise ValueError("block is not LT(n)")
    if block.trap_edge is None or block.trap_conductance < n:
        raise ValueError("block has no trap edge for this threshold")
    if block.visits_V < 1:
        raise ValueError("the trap edge was never entered in this block")
    key = block_key(seed, block.replica, block.index)
    return TrapObservables(block.visits_V, block.trap_pi_bar, block.trap_time,
                           block.trap_time / block.trap_conductance,
                           w_infty_sample(block.visits_V, block.trap_pi_bar, key),
                           block.trap_conductance, block.index, block.replica)


TRAP_COLUMNS = ["replica", "block_index", "V_n", "pi_bar", "T_on_edge", "W_n", "W_infty_sample",
                "trap_conductance"]


def write_trap_csv(obs: Sequence[TrapObservables], path) -> None:
    import csv
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAP_COLUMNS)
        for o in obs:
            w.writerow([o.replica, o.block_index, o.V_n, repr(o.pi_bar), o.T_on_edge, repr(o.W_n),
                        repr(o.W_infty_sample), repr(o.trap_conductance)])
