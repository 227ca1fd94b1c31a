"""Compiled streaming walker with online regeneration detection.

The walk is never stored.  Steps since the last certified regeneration time are
kept as a run-length buffer of alternating back-and-forth moves, and a stack of
small state machines evaluates the S_k / M_k / R_k iteration while the walk
advances.  Machine k waits for the level to exceed its threshold M (WAIT),
looks for a candidate with a double +e_1 step into an open vertex (SEARCH), and
then checks the backtrack functional D on the walk started there (CERT).  A
machine in CERT owns a child machine that already runs the iteration for the
walk shifted to the candidate, so when the candidate is certified the child
simply becomes the new root.

Excursions on edges with c_* >= skip_threshold (> K) are optionally jumped over
in O(1): the number of crossings is sampled from its exact law, the first
z = 0 crossing from each endpoint is drawn from its geometric law, and the exit
step is drawn from the kernel conditioned to leave the edge.  Endpoints of such
edges are closed, so no candidate can occur inside an excursion and only the
z = 0 clause of D needs the geometric draws.
"""

import math

import numpy as np
from numba import njit
from numba import types
from numba.typed import Dict

from ._core import (STREAM_EXIT, STREAM_LAST, STREAM_PAIRS, STREAM_STEP, STREAM_ZA, STREAM_ZB,
                    STREAM_ZRUN, conductance, draw, incident, kernel_from, sample_step, stream_seed)

EPS = 1e-9
WAIT = 0
SEARCH = 1
CERT = 2

# istate slots
I_T = 0
I_DEPTH = 1
I_RLEN = 2
I_NOUT = 3
I_CKI = 4
I_NBLK = 5
I_RSTART = 6
I_HASPEND = 7
I_PENDJ = 8
I_PENDZ = 9
I_ERR = 10
I_RUNS = 11
I_SKIPPED = 12
I_CANDS = 13
I_STEPS = 14
# an excursion cut by the horizon: flag, start time, first direction and bit
I_XPEND = 15
I_XT0 = 16
I_XJ = 17
I_XZ = 18
N_ISTATE = 19

# output int columns (before the variable-width coordinate columns)
O_START = 0
O_END = 1
O_ONMAX = 2
O_V = 3
O_T = 4
O_CROSS = 5
O_BELOW = 6
O_NLT = 7
O_NOBS = 8
O_HASTRAP = 9
O_OVERFLOW = 10
O_FIXED = 11  # then disp (d), max edge lower (d) + axis, trap edge lower (d) + axis

F_GAIN = 0
F_CMAX = 1
F_CSECOND = 2
F_PIBAR = 3
F_TRAPC = 4
F_TRAPPIBAR = 5
F_EXT_L = 6
F_EXT_F = 7
N_FCOLS = 8
N_TOP = 16


def n_icols(d):
    return O_FIXED + d + 2 * (d + 1)


@njit(cache=True, inline="always")
def _opp(j, d):
    return j + d if j < d else j - d


@njit(cache=True, inline="always")
def _move(x, j, d):
    if j < d:
        x[j] += 1
    else:
        x[j - d] -= 1


@njit(cache=True, inline="always")
def _level(x, ell):
    s = 0.0
    for k in range(x.shape[0]):
        s += x[k] * ell[k]
    return s


@njit(cache=True, inline="always")
def _is_pos_unit(a, b):
    """True if a - b is one of +e_1 .. +e_d."""
    ones = 0
    for k in range(a.shape[0]):
        v = a[k] - b[k]
        if v == 1:
            ones += 1
        elif v != 0:
            return False
    return ones == 1


@njit(cache=True, inline="always")
def _cache_get(x, cpos, ccs, cp, cpk, cturn, seed, kind, lp, okeys, ovals, expw, K):
    """Return the slot of a two-entry kernel cache holding x, computing it if needed."""
    d = x.shape[0]
    for s in range(2):
        hit = True
        for k in range(d):
            if cpos[s, k] != x[k]:
                hit = False
                break
        if hit and cturn[2 + s] == 1:
            return s
    s = cturn[0]
    cturn[0] = 1 - s
    for k in range(d):
        cpos[s, k] = x[k]
    incident(seed, kind, lp, okeys, ovals, x, ccs[s])
    kernel_from(ccs[s], expw, K, cp[s], cpk[s])
    cturn[2 + s] = 1
    return s


@njit(cache=True, inline="always")
def _open_from(cs, K):
    for j in range(cs.shape[0]):
        if cs[j] < 1.0 / K or cs[j] > K:
            return False
    return True


@njit(cache=True)
def _sample_excl(p, pk, u, excl):
    tot = 0.0
    for j in range(p.shape[0]):
        if j != excl:
            tot += p[j]
    u = u * tot
    acc = 0.0
    last = 0
    for j in range(p.shape[0]):
        if j == excl:
            continue
        if p[j] > 0.0:
            last = j
        acc += pk[j]
        if u <= acc:
            return j, 1
        acc += p[j] - pk[j]
        if u <= acc:
            return j, 0
    return last, 0


@njit(cache=True)
def _geom_trials(u, s):
    """Number of Bernoulli trials up to and including the first failure, P[fail] = 1 - s."""
    if s <= 0.0:
        return 1.0
    if s >= 1.0:
        return math.inf
    return 1.0 + math.floor(math.log(u) / math.log(s))


# -- block statistics --------------------------------------------------------------------------

@njit(cache=True)
def _vkey(rel, bits, off):
    key = np.int64(0)
    for k in range(rel.shape[0]):
        key |= np.int64(rel[k] + off) << np.int64(bits * k)
    return key


@njit(cache=True)
def _vdecode(key, bits, off, out):
    mask = (np.int64(1) << np.int64(bits)) - 1
    for k in range(out.shape[0]):
        out[k] = ((key >> np.int64(bits * k)) & mask) - off


@njit(cache=True)
def _edge_less(la, aa, lb, ab, d):
    """Lexicographic order on (lower endpoint, upper endpoint)."""
    for k in range(d):
        if la[k] != lb[k]:
            return la[k] < lb[k]
    # same lower endpoint: compare upper = lower + e_axis
    for k in range(d):
        ua = la[k] + (1 if k == aa else 0)
        ub = lb[k] + (1 if k == ab else 0)
        if ua != ub:
            return ua < ub
    return False


@njit(cache=True)
def _pi_bar(lower, axis, seed, kind, lp, okeys, ovals, ell, work, cs):
    """exp(-(e+ + e-).l) pi(x_e) for the edge [lower, lower + e_axis]."""
    d = lower.shape[0]
    tot = 0.0
    for side in range(2):
        for k in range(d):
            work[k] = lower[k]
        if side == 1:
            work[axis] += 1
        incident(seed, kind, lp, okeys, ovals, work, cs)
        for j in range(2 * d):
            if side == 0 and j == axis:
                continue
            if side == 1 and j == axis + d:
                continue
            # (u + (u + e_j) - lower - (lower + e_axis)) . ell
            ex = 0.0
            for k in range(d):
                v = 2 * (work[k] - lower[k]) - (1 if k == axis else 0)
                if j < d and k == j:
                    v += 1
                if j >= d and k == j - d:
                    v -= 1
                ex += v * ell[k]
            tot += cs[j] * math.exp(ex)
    return tot


@njit(cache=True)
def _trap_scan(v, spos, has_trap, trap_low, trap_ax, cand_low, work, cs, seed, kind, lp, okeys, ovals,
               n_thr):
    """Select e^(n) at the first visited vertex having an incident edge with c_* >= n."""
    d = v.shape[0]
    for k in range(d):
        work[k] = v[k] + spos[k]
    incident(seed, kind, lp, okeys, ovals, work, cs)
    for jj in range(2 * d):
        if cs[jj] >= n_thr:
            for k in range(d):
                cand_low[k] = v[k]
            cax = jj
            if jj >= d:
                cand_low[jj - d] -= 1
                cax = jj - d
            if has_trap == 0 or _edge_less(cand_low, cax, trap_low, trap_ax, d):
                trap_low[:] = cand_low
                trap_ax = cax
                has_trap = 1
    return has_trap, trap_ax


@njit(cache=True)
def _emit(s, S, spos, rdir, rcnt, rlen, seed, kind, lp, okeys, ovals, ell, direction, fbasis,
          K, n_thr, small_thr, out_i, out_f, out_top, row):
    """Replay the buffer over [s, S], write one block row and return (entries, split)."""
    d = spos.shape[0]
    bits = 60 // d
    off = np.int64(1) << np.int64(bits - 1)
    visits = Dict.empty(key_type=types.int64, value_type=types.int64)
    cross = Dict.empty(key_type=types.int64, value_type=types.int64)
    cond = Dict.empty(key_type=types.int64, value_type=types.float64)
    cs = np.empty(2 * d)
    work = np.empty(d, dtype=np.int64)
    rel = np.zeros(d, dtype=np.int64)
    q = np.empty(d, dtype=np.int64)
    lowr = np.empty(d, dtype=np.int64)
    overflow = 0
    ext_l = 0.0
    ext_f = 0.0
    has_trap = 0
    trap_low = np.zeros(d, dtype=np.int64)
    trap_ax = 0
    cand_low = np.zeros(d, dtype=np.int64)

    total = S - s
    consumed = 0
    e = 0
    split = 0
    # X_s is visited at time s < S
    visits[_vkey(rel, bits, off)] = 1
    has_trap, trap_ax = _trap_scan(rel, spos, has_trap, trap_low, trap_ax, cand_low, work, cs,
                                   seed, kind, lp, okeys, ovals, n_thr)
    while consumed < total:
        j0 = rdir[e]
        cnt = rcnt[e]
        cnt_use = min(cnt, total - consumed)
        if cnt_use < cnt:
            split = cnt_use
        # the entry moves back and forth between rel and q
        for k in range(d):
            q[k] = rel[k]
        _move(q, j0, d)
        for k in range(d):
            lowr[k] = min(rel[k], q[k])
            if abs(q[k]) >= off - 2:
                overflow = 1
        if overflow:
            break
        ax = j0 if j0 < d else j0 - d
        ekey = _vkey(lowr, bits, off) * 8 + ax
        cross[ekey] = cross.get(ekey, 0) + cnt_use
        # arrivals at times < S: q on odd crossings, rel on even ones
        kk = cnt_use - 1 if consumed + cnt_use == total else cnt_use
        nq = (kk + 1) // 2
        npv = kk // 2
        lq = 0.0
        for k in range(d):
            lq += q[k] * direction[k]
        if abs(lq) > ext_l:
            ext_l = abs(lq)
        for r in range(fbasis.shape[0]):
            tf = 0.0
            for k in range(d):
                tf += q[k] * fbasis[r, k]
            if abs(tf) > ext_f:
                ext_f = abs(tf)
        if nq > 0:
            kq = _vkey(q, bits, off)
            if kq not in visits:
                visits[kq] = 0
                if has_trap == 0:
                    has_trap, trap_ax = _trap_scan(q, spos, has_trap, trap_low, trap_ax, cand_low, work,
                                                   cs, seed, kind, lp, okeys, ovals, n_thr)
            visits[kq] = visits[kq] + nq
        if npv > 0:
            kp = _vkey(rel, bits, off)
            visits[kp] = visits[kp] + npv
        consumed += cnt_use
        if cnt_use % 2 == 1:
            for k in range(d):
                rel[k] = q[k]
        if cnt_use == cnt:
            e += 1
    ni = out_i.shape[1]
    for c in range(ni):
        out_i[row, c] = 0
    out_i[row, O_START] = s
    out_i[row, O_END] = S
    out_i[row, O_OVERFLOW] = overflow
    for k in range(d):
        out_i[row, O_FIXED + k] = rel[k]
    out_f[row, F_GAIN] = _level(rel + spos, direction) - _level(spos, direction)
    out_f[row, F_EXT_L] = ext_l
    out_f[row, F_EXT_F] = ext_f
    if overflow:
        return e, split
    # touched edges: all edges at visited vertices
    for vk in visits:
        _vdecode(vk, bits, off, rel)
        for k in range(d):
            work[k] = rel[k] + spos[k]
        incident(seed, kind, lp, okeys, ovals, work, cs)
        for jj in range(2 * d):
            for k in range(d):
                lowr[k] = rel[k]
            ax = jj
            if jj >= d:
                lowr[jj - d] -= 1
                ax = jj - d
            cond[_vkey(lowr, bits, off) * 8 + ax] = cs[jj]
    # max edge with lexicographic tie-break
    cmax = -1.0
    mlow = np.zeros(d, dtype=np.int64)
    max_ax = 0
    for ek in cond:
        c = cond[ek]
        _vdecode(ek >> 3, bits, off, lowr)
        ax = ek & 7
        if c > cmax or (c == cmax and _edge_less(lowr, ax, mlow, max_ax, d)):
            cmax = c
            mlow[:] = lowr
            max_ax = ax
    # observed set adds the edges adjacent to the max edge
    for side in range(2):
        for k in range(d):
            rel[k] = mlow[k]
        if side == 1:
            rel[max_ax] += 1
        for k in range(d):
            work[k] = rel[k] + spos[k]
        incident(seed, kind, lp, okeys, ovals, work, cs)
        for jj in range(2 * d):
            for k in range(d):
                lowr[k] = rel[k]
            ax = jj
            if jj >= d:
                lowr[jj - d] -= 1
                ax = jj - d
            cond[_vkey(lowr, bits, off) * 8 + ax] = cs[jj]
    mkey = _vkey(mlow, bits, off) * 8 + max_ax
    csecond = 0.0
    nlt = 0
    vals = np.empty(len(cond))
    i = 0
    for ek in cond:
        c = cond[ek]
        vals[i] = c
        i += 1
        if ek != mkey and c > csecond:
            csecond = c
        if c >= small_thr:
            nlt += 1
    vals = -np.sort(-vals)
    for r in range(N_TOP):
        out_top[row, r] = vals[r] if r < vals.shape[0] else 0.0
    below = 0
    for ek in cross:
        if cond[ek] < n_thr:
            below += cross[ek]
    # time on the max edge
    ka = _vkey(mlow, bits, off)
    for k in range(d):
        rel[k] = mlow[k]
    rel[max_ax] += 1
    kb = _vkey(rel, bits, off)
    onmax = visits.get(ka, 0) + visits.get(kb, 0)
    for k in range(d):
        work[k] = mlow[k] + spos[k]
    pib = _pi_bar(work, max_ax, seed, kind, lp, okeys, ovals, ell, q, cs)
    out_i[row, O_ONMAX] = onmax
    out_i[row, O_BELOW] = below
    out_i[row, O_NLT] = nlt
    out_i[row, O_NOBS] = len(cond)
    out_i[row, O_HASTRAP] = has_trap
    base = O_FIXED + d
    for k in range(d):
        out_i[row, base + k] = mlow[k] + spos[k]
    out_i[row, base + d] = max_ax
    out_f[row, F_CMAX] = cmax
    out_f[row, F_CSECOND] = csecond
    out_f[row, F_PIBAR] = pib
    if has_trap:
        ta = _vkey(trap_low, bits, off)
        for k in range(d):
            rel[k] = trap_low[k]
        rel[trap_ax] += 1
        tb = _vkey(rel, bits, off)
        tkey = ta * 8 + trap_ax
        out_i[row, O_T] = visits.get(ta, 0) + visits.get(tb, 0)
        out_i[row, O_CROSS] = cross.get(tkey, 0)
        # entries into the trap: second replay
        V = 0
        for k in range(d):
            rel[k] = 0
        consumed = 0
        ee = 0
        while consumed < total:
            j0 = rdir[ee]
            cnt_use = min(rcnt[ee], total - consumed)
            for k in range(d):
                q[k] = rel[k]
            _move(q, j0, d)
            kp = _vkey(rel, bits, off)
            kq = _vkey(q, bits, off)
            pin = kp == ta or kp == tb
            qin = kq == ta or kq == tb
            if (not pin) and qin:
                V += (cnt_use + 1) // 2
            elif pin and not qin:
                V += cnt_use // 2
            if cnt_use % 2 == 1:
                for k in range(d):
                    rel[k] = q[k]
            consumed += cnt_use
            ee += 1
        out_i[row, O_V] = V
        base2 = base + d + 1
        for k in range(d):
            out_i[row, base2 + k] = trap_low[k] + spos[k]
            work[k] = trap_low[k] + spos[k]
        out_i[row, base2 + d] = trap_ax
        out_f[row, F_TRAPC] = conductance(seed, kind, lp, okeys, ovals, work, trap_ax)
        out_f[row, F_TRAPPIBAR] = _pi_bar(work, trap_ax, seed, kind, lp, okeys, ovals, ell, q, cs)
    return e, split


# -- machine stack -----------------------------------------------------------------------------

@njit(cache=True)
def _record_block(ist, mi, mf, rdir, rcnt, rstart_pos, seed, kind, lp, okeys, ovals, ell, direction,
                  fbasis, K, n_thr, small_thr, out_i, out_f, out_top):
    d = rstart_pos.shape[0]
    s = mi[0, 1]
    S = mi[0, 3]
    row = ist[I_NOUT]
    e, split = _emit(s, S, rstart_pos, rdir, rcnt, ist[I_RLEN], seed, kind, lp, okeys, ovals, ell,
                     direction, fbasis, K, n_thr, small_thr, out_i, out_f, out_top, row)
    ist[I_NOUT] = row + 1
    ist[I_NBLK] += 1
    # drop the consumed entries
    rlen = ist[I_RLEN]
    if split > 0:
        j0 = rdir[e]
        rdir[e] = j0 if split % 2 == 0 else _opp(j0, d)
        rcnt[e] -= split
    n_left = rlen - e
    for r in range(n_left):
        rdir[r] = rdir[e + r]
        rcnt[r] = rcnt[e + r]
    ist[I_RLEN] = n_left
    ist[I_RSTART] = S
    for k in range(d):
        rstart_pos[k] = mi[0, 4 + k]
    # pop the root machine
    depth = ist[I_DEPTH]
    for r in range(depth - 1):
        mi[r, :] = mi[r + 1, :]
        mf[r, :] = mf[r + 1, :]
    ist[I_DEPTH] = depth - 1


@njit(cache=True, inline="always")
def _process_time(t, z, x_open, ist, ring_pos, ring_lvl, mi, mf, margin_lvl):
    """Advance every machine by time t; returns 1 when the root must emit its block."""
    d = ring_pos.shape[1]
    r0 = t % 4
    l = ring_lvl[r0]
    k = 0
    while k < ist[I_DEPTH]:
        if l > mf[k, 1]:
            mf[k, 1] = l
        st = mi[k, 0]
        if st == WAIT:
            if l > mf[k, 0] + EPS:
                mi[k, 0] = SEARCH
                mi[k, 2] = t
                mf[k, 2] = -math.inf
            k += 1
            continue
        if st == SEARCH:
            i = t - mi[k, 2]
            if i >= 3:
                lv = ring_lvl[(t - 3) % 4]
                if lv > mf[k, 2]:
                    mf[k, 2] = lv
            if i >= 2 and x_open:
                r1 = (t - 1) % 4
                r2 = (t - 2) % 4
                ok = ring_pos[r0, 0] - ring_pos[r1, 0] == 1 and ring_pos[r1, 0] - ring_pos[r2, 0] == 1
                if ok and mf[k, 2] < ring_lvl[r2] - EPS:
                    mi[k, 0] = CERT
                    mi[k, 3] = t
                    ist[I_CANDS] += 1
                    for c in range(d):
                        mi[k, 4 + c] = ring_pos[r0, c]
                    mf[k, 3] = l
                    if k + 1 >= mi.shape[0]:
                        ist[I_ERR] = 1
                        return 0
                    mi[k + 1, 0] = WAIT
                    mi[k + 1, 1] = t
                    mf[k + 1, 0] = l
                    mf[k + 1, 1] = l
                    ist[I_DEPTH] = k + 2
                    return 0
            k += 1
            continue
        # CERT
        n = t - mi[k, 3]
        viol = l <= mf[k, 3] + EPS
        if (not viol) and z == 0:
            if n == 1:
                viol = True
            else:
                r1 = (t - 1) % 4
                ones = 0
                bad = False
                for c in range(d):
                    v = ring_pos[r1, c] - mi[k, 4 + c]
                    if v == 1:
                        ones += 1
                    elif v != 0:
                        bad = True
                if (not bad) and ones == 1:
                    viol = True
        if viol:
            mi[k, 0] = WAIT
            mf[k, 0] = mf[k, 1]
            ist[I_DEPTH] = k + 1
            return 0
        if l >= mf[k, 3] + margin_lvl - EPS:
            if k != 0:
                ist[I_ERR] = 2
                return 0
            return 1
        k += 1
    return 0


@njit(cache=True, inline="always")
def _advance(t, z, x_open, ist, ring_pos, ring_lvl, mi, mf, margin_lvl, rdir, rcnt, rstart_pos, seed,
             kind, lp, okeys, ovals, ell, direction, fbasis, K, n_thr, small_thr, out_i, out_f, out_top):
    while _process_time(t, z, x_open, ist, ring_pos, ring_lvl, mi, mf, margin_lvl) == 1:
        _record_block(ist, mi, mf, rdir, rcnt, rstart_pos, seed, kind, lp, okeys, ovals, ell,
                      direction, fbasis, K, n_thr, small_thr, out_i, out_f, out_top)


@njit(cache=True, inline="always")
def _rle_push(rdir, rcnt, ist, j, d):
    rlen = ist[I_RLEN]
    if rlen > 0:
        j0 = rdir[rlen - 1]
        last = j0 if rcnt[rlen - 1] % 2 == 1 else _opp(j0, d)
        if last == _opp(j, d):
            rcnt[rlen - 1] += 1
            return
    rdir[rlen] = j
    rcnt[rlen] = 1
    ist[I_RLEN] = rlen + 1


@njit(cache=True, inline="always")
def _arrive(x, t, ring_pos, ring_lvl, direction, ck_times, ck_pos, ist):
    r = t % 4
    for c in range(x.shape[0]):
        ring_pos[r, c] = x[c]
    ring_lvl[r] = _level(x, direction)
    while ist[I_CKI] < ck_times.shape[0] and ck_times[ist[I_CKI]] == t:
        ck_pos[ist[I_CKI], :] = x
        ist[I_CKI] += 1


@njit(cache=True)
def stream(seed, kind, lp, okeys, ovals, expw, K, ell, direction, fbasis, wseed, skip_thr, margin_lvl,
           n_thr, small_thr, horizon, max_blocks, ist, x, ring_pos, ring_lvl, mi, mf, rdir, rcnt,
           rstart_pos, out_i, out_f, out_top, ck_times, ck_pos):
    """Advance the walker until the horizon, the block target, or a full buffer.

    Returns 0 (horizon), 1 (block target), 2 (output rows full), 3 (run buffer
    full) or -1 (internal error, see ist[I_ERR]).
    """
    d = x.shape[0]
    cpos = np.zeros((2, d), dtype=np.int64)
    ccs = np.empty((2, 2 * d))
    cp = np.empty((2, 2 * d))
    cpk = np.empty((2, 2 * d))
    cturn = np.zeros(4, dtype=np.int64)
    ss_step = stream_seed(wseed, STREAM_STEP)
    ss_pairs = stream_seed(wseed, STREAM_PAIRS)
    ss_last = stream_seed(wseed, STREAM_LAST)
    ss_za = stream_seed(wseed, STREAM_ZA)
    ss_zb = stream_seed(wseed, STREAM_ZB)
    ss_exit = stream_seed(wseed, STREAM_EXIT)
    ss_zrun = stream_seed(wseed, STREAM_ZRUN)
    a = np.empty(d, dtype=np.int64)
    b = np.empty(d, dtype=np.int64)
    B = out_i.shape[0]
    md = mi.shape[0]
    while True:
        if ist[I_ERR] != 0:
            return -1
        t = ist[I_T]
        if t >= horizon:
            return 0
        if max_blocks >= 0 and ist[I_NBLK] >= max_blocks:
            return 1
        if ist[I_NOUT] + md + 1 > B:
            return 2
        if ist[I_RLEN] + 8 > rdir.shape[0]:
            return 3
        s = _cache_get(x, cpos, ccs, cp, cpk, cturn, seed, kind, lp, okeys, ovals, expw, K)
        resume = ist[I_XPEND] == 1
        if resume:
            # finish the excursion cut by the previous horizon: rewind x to its base vertex
            t0 = ist[I_XT0]
            j = ist[I_XJ]
            z = ist[I_XZ]
            if (t - t0) % 2 == 1:
                _move(x, _opp(j, d), d)
            s = _cache_get(x, cpos, ccs, cp, cpk, cturn, seed, kind, lp, okeys, ovals, expw, K)
        elif ist[I_HASPEND] == 1:
            j = ist[I_PENDJ]
            z = ist[I_PENDZ]
            ist[I_HASPEND] = 0
        else:
            j, z = sample_step(cp[s], cpk[s], draw(ss_step, t))
        if not resume and ccs[s, j] < skip_thr:
            _move(x, j, d)
            t += 1
            ist[I_T] = t
            ist[I_STEPS] += 1
            _rle_push(rdir, rcnt, ist, j, d)
            _arrive(x, t, ring_pos, ring_lvl, direction, ck_times, ck_pos, ist)
            s2 = _cache_get(x, cpos, ccs, cp, cpk, cturn, seed, kind, lp, okeys, ovals, expw, K)
            _advance(t, z, _open_from(ccs[s2], K), ist, ring_pos, ring_lvl, mi, mf, margin_lvl,
                     rdir, rcnt, rstart_pos, seed, kind, lp, okeys, ovals, ell, direction, fbasis, K,
                     n_thr, small_thr, out_i, out_f, out_top)
            continue
        # ---- excursion on a heavy edge from a to b ----
        if not resume:
            ist[I_RUNS] += 1
            t0 = t
        done = t - t0
        jb = _opp(j, d)
        a[:] = x
        b[:] = x
        _move(b, j, d)
        ra = cp[s, j]
        other_a = 0.0
        for i in range(2 * d):
            if i != j:
                other_a += cp[s, i]
        sa = cpk[s, j] / cp[s, j]
        sb_slot = _cache_get(b, cpos, ccs, cp, cpk, cturn, seed, kind, lp, okeys, ovals, expw, K)
        rb = cp[sb_slot, jb]
        other_b = 0.0
        for i in range(2 * d):
            if i != jb:
                other_b += cp[sb_slot, i]
        sb = cpk[sb_slot, jb] / cp[sb_slot, jb]
        la = _level(a, direction)
        lb = _level(b, direction)
        qq = other_a + ra * other_b  # 1 - ra * rb without cancellation
        if qq >= 1.0:
            pairs = 0.0
        else:
            pairs = math.floor(math.log(draw(ss_pairs, t0)) / math.log1p(-qq))
        pend = rb * other_a / qq
        mfl = 1.0 + 2.0 * pairs + (1.0 if draw(ss_last, t0) < pend else 0.0)
        remaining = horizon - t0
        m = remaining if mfl >= remaining else np.int64(mfl)
        if m < mfl:
            ist[I_XPEND] = 1
            ist[I_XT0] = t0
            ist[I_XJ] = j
            ist[I_XZ] = z
        else:
            ist[I_XPEND] = 0
        # crossings processed one by one (at most 4)
        nind = min(m, 4)
        for c in range(done + 1, nind + 1):
            if c == 1:
                jj = j
                zz = z
            else:
                fa = c % 2 == 1
                jj = j if fa else jb
                sfrom = sa if fa else sb
                zz = 1 if draw(ss_zrun, t) < sfrom else 0
            _move(x, jj, d)
            t += 1
            ist[I_T] = t
            _rle_push(rdir, rcnt, ist, jj, d)
            _arrive(x, t, ring_pos, ring_lvl, direction, ck_times, ck_pos, ist)
            _advance(t, zz, False, ist, ring_pos, ring_lvl, mi, mf, margin_lvl,
                     rdir, rcnt, rstart_pos, seed, kind, lp, okeys, ovals, ell, direction, fbasis, K,
                     n_thr, small_thr, out_i, out_f, out_top)
            if ist[I_ERR] != 0:
                return -1
        if m > 4:
            # the level maxima and the violation scan below are idempotent, so a resumed
            # excursion can repeat them over its full length
            ist[I_SKIPPED] += m - max(done, 4)
            t_end = t0 + m
            # first z = 0 crossing among crossings 5, 7, ... (from a) and 6, 8, ... (from b)
            ga = _geom_trials(draw(ss_za, t0), sa)
            gb = _geom_trials(draw(ss_zb, t0), sb)
            ca = 5.0 + 2.0 * (ga - 1.0)
            cb = 6.0 + 2.0 * (gb - 1.0)
            k = 0
            while k < ist[I_DEPTH]:
                if la > mf[k, 1]:
                    mf[k, 1] = la
                if lb > mf[k, 1]:
                    mf[k, 1] = lb
                st = mi[k, 0]
                if st == SEARCH:
                    if mi[k, 2] > t0 + 2:
                        ist[I_ERR] = 3
                        return -1
                    if la > mf[k, 2]:
                        mf[k, 2] = la
                    if t_end - 3 >= t0 + 3 and lb > mf[k, 2]:
                        mf[k, 2] = lb
                elif st == CERT:
                    viol_c = math.inf
                    Spos = mi[k, 4:4 + d]
                    if ca <= m and _is_pos_unit(a, Spos):
                        viol_c = ca
                    if cb <= m and _is_pos_unit(b, Spos) and cb < viol_c:
                        viol_c = cb
                    if viol_c < math.inf:
                        mi[k, 0] = WAIT
                        mf[k, 0] = mf[k, 1]
                        ist[I_DEPTH] = k + 1
                        break
                k += 1
            # position and ring at the end of the excursion
            for tt in range(t_end - 3, t_end + 1):
                if (tt - t0) % 2 == 0:
                    ring_pos[tt % 4, :] = a
                    ring_lvl[tt % 4] = la
                else:
                    ring_pos[tt % 4, :] = b
                    ring_lvl[tt % 4] = lb
            while ist[I_CKI] < ck_times.shape[0] and ck_times[ist[I_CKI]] <= t_end:
                tt = ck_times[ist[I_CKI]]
                ck_pos[ist[I_CKI], :] = a if (tt - t0) % 2 == 0 else b
                ist[I_CKI] += 1
            rcnt[ist[I_RLEN] - 1] += m - max(done, 4)
            if m % 2 == 0:
                x[:] = a
            else:
                x[:] = b
            t = t_end
            ist[I_T] = t
        if t >= horizon:
            continue
        # exit step, conditioned not to cross the heavy edge again
        at_a = (t - t0) % 2 == 0
        se = _cache_get(x, cpos, ccs, cp, cpk, cturn, seed, kind, lp, okeys, ovals, expw, K)
        excl = j if at_a else jb
        j2, z2 = _sample_excl(cp[se], cpk[se], draw(ss_exit, t), excl)
        ist[I_HASPEND] = 1
        ist[I_PENDJ] = j2
        ist[I_PENDZ] = z2
