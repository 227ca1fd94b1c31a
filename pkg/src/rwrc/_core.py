"""Compiled primitives shared by the environment, walk and regeneration code.

Everything random is derived from counter-based hashing, so a value depends
only on (seed, key) and never on evaluation order.  The conventions below are
used throughout the package:

* direction index ``j < d`` means ``+e_j`` and ``j >= d`` means ``-e_{j-d}``;
* an edge is stored by its lower endpoint ``x`` and its axis ``i`` so that the
  edge is ``[x, x + e_i]``;
* law kinds: 0 = Pareto, 1 = log-corrected power, 2 = uniform (bounded).
"""

import math

import numpy as np
from numba import njit

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
EDGE_SALT = np.uint64(0x5851F42D4C957F2D)
INV53 = 2.0 ** -53

LAW_PARETO = 0
LAW_LOG_POWER = 1
LAW_UNIFORM = 2

# stream identifiers for walk randomness
STREAM_STEP = 0
STREAM_PAIRS = 1
STREAM_LAST = 2
STREAM_ZA = 3
STREAM_ZB = 4
STREAM_EXIT = 5
STREAM_ZRUN = 6
STREAM_COUPLE = 7
STREAM_COUPLE_B = 8
STREAM_WINF = 9


@njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> np.uint64(30))) * MIX1
    z = (z ^ (z >> np.uint64(27))) * MIX2
    return z ^ (z >> np.uint64(31))


_M64 = (1 << 64) - 1


def mix64_py(z: int) -> int:
    """Pure-Python mix64 on unbounded ints, for seed derivation outside compiled code."""
    z &= _M64
    z = ((z ^ (z >> 30)) * int(MIX1)) & _M64
    z = ((z ^ (z >> 27)) * int(MIX2)) & _M64
    return z ^ (z >> 31)


def derive_seed(seed: int, *keys: int) -> int:
    """Keyed 64-bit seed for (seed, k1, k2, ...); never sequential splitting."""
    h = mix64_py((int(seed) & _M64) ^ int(EDGE_SALT))
    for i, k in enumerate(keys):
        h = mix64_py(h ^ (((int(k) & _M64) + int(GOLDEN) * (i + 1)) & _M64))
    return h


@njit(cache=True, inline="always")
def to_unit(h):
    """Map a 64-bit hash to a uniform in (0, 1]."""
    return (np.float64(h >> np.uint64(11)) + 1.0) * INV53


@njit(cache=True, inline="always")
def stream_seed(seed, stream):
    return mix64(np.uint64(seed) + np.uint64(stream + 1) * MIX1 + GOLDEN)


@njit(cache=True, inline="always")
def draw(sseed, counter):
    return to_unit(mix64(sseed + (np.uint64(counter) + np.uint64(1)) * GOLDEN))


@njit(cache=True)
def stream_draw(seed, stream, counter):
    """Draw number ``counter`` of a stream, callable from Python with a uint64 seed."""
    return draw(stream_seed(seed, stream), np.uint64(counter))


@njit(cache=True, inline="always")
def edge_uniform(seed, x, axis):
    h = mix64(np.uint64(seed) ^ EDGE_SALT)
    for k in range(x.shape[0]):
        h = mix64(h ^ (np.uint64(x[k]) + GOLDEN * np.uint64(k + 1)))
    h = mix64(h ^ (np.uint64(axis + 1) * MIX2))
    return to_unit(h)


@njit(cache=True, inline="always")
def log_power_tail(t, gamma, beta, x_min):
    if t <= x_min:
        return 1.0
    return (t / x_min) ** (-gamma) * (math.log(math.e + t) / math.log(math.e + x_min)) ** beta


@njit(cache=True, inline="always")
def quantile(u, kind, lp):
    """Inverse tail: the conductance c with P[c > c] = u (u in (0, 1])."""
    if kind == LAW_PARETO:
        return lp[2] * u ** (-1.0 / lp[0])
    if kind == LAW_UNIFORM:
        return lp[3] + (lp[4] - lp[3]) * (1.0 - u)
    gamma, beta, x_min = lp[0], lp[1], lp[2]
    if u >= 1.0:
        return x_min
    lo = math.log(x_min)
    hi = lo + 1.0
    while log_power_tail(math.exp(hi), gamma, beta, x_min) > u:
        lo = hi
        hi = 2.0 * hi + 1.0
        if hi > 700.0:
            return math.exp(700.0)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if log_power_tail(math.exp(mid), gamma, beta, x_min) > u:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14 * max(1.0, abs(hi)):
            break
    return math.exp(hi)


@njit(cache=True, inline="always")
def conductance(seed, kind, lp, okeys, ovals, x, axis):
    """c_* of the edge [x, x + e_axis]; ``okeys`` rows are (x..., axis)."""
    d = x.shape[0]
    for r in range(okeys.shape[0]):
        if okeys[r, d] != axis:
            continue
        same = True
        for k in range(d):
            if okeys[r, k] != x[k]:
                same = False
                break
        if same:
            return ovals[r]
    return quantile(edge_uniform(seed, x, axis), kind, lp)


@njit(cache=True, inline="always")
def incident(seed, kind, lp, okeys, ovals, x, cs):
    """Fill cs[j] with c_* of the edge from x in direction j."""
    d = x.shape[0]
    for i in range(d):
        cs[i] = conductance(seed, kind, lp, okeys, ovals, x, i)
        x[i] -= 1
        cs[d + i] = conductance(seed, kind, lp, okeys, ovals, x, i)
        x[i] += 1


@njit(cache=True, inline="always")
def is_open(seed, kind, lp, okeys, ovals, x, K, cs):
    incident(seed, kind, lp, okeys, ovals, x, cs)
    for j in range(cs.shape[0]):
        if cs[j] < 1.0 / K or cs[j] > K:
            return False
    return True


@njit(cache=True, inline="always")
def kernel_from(cs, expw, K, p, pk):
    """Transition probabilities p and p_K given incident conductances."""
    n = cs.shape[0]
    tot = 0.0
    totk = 0.0
    for j in range(n):
        tot += cs[j] * expw[j]
        totk += max(cs[j], K) * expw[j]
    for j in range(n):
        p[j] = cs[j] * expw[j] / tot
        pk[j] = min(cs[j], 1.0 / K) * expw[j] / totk
        if pk[j] > p[j]:
            pk[j] = p[j]


@njit(cache=True, inline="always")
def sample_step(p, pk, u):
    """Pick (direction, z) from one uniform over the 4d enhanced outcomes."""
    acc = 0.0
    n = p.shape[0]
    last = 0
    for j in range(n):
        if p[j] > 0.0:
            last = j
        acc += pk[j]
        if u <= acc:
            return j, 1
        acc += p[j] - pk[j]
        if u <= acc:
            return j, 0
    return last, 0


@njit(cache=True, inline="always")
def move(x, j, d):
    if j < d:
        x[j] += 1
    else:
        x[j - d] -= 1


@njit(cache=True)
def run_walk_kernel(seed, kind, lp, okeys, ovals, expw, K, wseed, start, z0, steps):
    d = start.shape[0]
    pos = np.empty((steps + 1, d), dtype=np.int64)
    zb = np.empty(steps + 1, dtype=np.uint8)
    x = start.copy()
    pos[0] = x
    zb[0] = z0
    cs = np.empty(2 * d)
    p = np.empty(2 * d)
    pk = np.empty(2 * d)
    ss = stream_seed(wseed, STREAM_STEP)
    for t in range(steps):
        incident(seed, kind, lp, okeys, ovals, x, cs)
        kernel_from(cs, expw, K, p, pk)
        j, z = sample_step(p, pk, draw(ss, t))
        move(x, j, d)
        pos[t + 1] = x
        zb[t + 1] = z
    return pos, zb
