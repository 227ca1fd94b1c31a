"""Statistical checks of the scaling behaviour: tail indices, clocks and fluctuations."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field as dc_field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from ._core import derive_seed
from .env import ConductanceLaw
from .regen import RegenBlock


# -- normalization -----------------------------------------------------------------------------

def inv_scale(law: ConductanceLaw, n: float) -> float:
    """inf{x : P[c_* > x] <= 1/n}."""
    if n < 1:
        raise ValueError("n must be >= 1")
    target = 1.0 / n
    if law.slowly_varying == "constant":
        return law.x_min * n ** (1.0 / law.gamma)
    if law.slowly_varying == "bounded":
        if law.hi == law.lo:
            return law.lo
        return law.lo + (law.hi - law.lo) * (1.0 - target)
    if n == 1:
        return law.x_min
    lo = law.x_min
    hi = law.x_min * 2.0
    while float(law.tail(hi)) > target:
        lo = hi
        hi *= 2.0
    # bisection on a log scale down to relative width 1e-10
    while hi / lo - 1.0 > 1e-10:
        mid = math.sqrt(lo * hi)
        if float(law.tail(mid)) <= target:
            hi = mid
        else:
            lo = mid
    return hi


# -- tail index --------------------------------------------------------------------------------

@dataclass(frozen=True)
class TailFit:
    gamma_hat: float
    k_used: int
    ci_half_width: float


def hill_estimate(samples: Sequence[float], k: Optional[int] = None) -> TailFit:
    """Hill estimator over the k largest order statistics (default floor(sqrt(N)))."""
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1 or np.any(~(x > 0)):
        raise ValueError("samples must be positive")
    if k is None:
        k = int(math.isqrt(len(x)))
    k = int(k)
    if k < 1 or len(x) < k + 1:
        raise ValueError(f"need at least k + 1 = {k + 1} samples")
    top = np.sort(x)[::-1][: k + 1]
    logs = np.log(top[:k]) - math.log(top[k])
    s = float(logs.sum())
    if s <= 0:
        raise ValueError("degenerate sample: the top order statistics are all equal")
    g = k / s
    return TailFit(g, k, 1.96 * g / math.sqrt(k))


def hill_sensitivity(samples: Sequence[float]) -> Dict[int, TailFit]:
    """Hill fits at k/2, k and 2k around the default k."""
    k = int(math.isqrt(len(samples)))
    out = {}
    for kk in (max(k // 2, 1), k, 2 * k):
        if kk + 1 <= len(samples):
            out[kk] = hill_estimate(samples, kk)
    return out


# -- displacement exponent ---------------------------------------------------------------------

def _check_checkpoints(checkpoints) -> np.ndarray:
    c = np.asarray(checkpoints, dtype=float)
    if c.ndim != 1 or len(c) < 3:
        raise ValueError("need at least 3 checkpoints")
    if np.any(c <= 0):
        raise ValueError("checkpoints must be positive")
    if math.log10(c.max() / c.min()) < 2 - 1e-12:
        raise ValueError("checkpoints must span at least two decades")
    return c


def _levels_at(traj_or_levels, checkpoints) -> np.ndarray:
    if hasattr(traj_or_levels, "levels"):
        return np.asarray(traj_or_levels.levels)[np.asarray(checkpoints, dtype=np.int64)][None, :]
    lv = np.asarray(traj_or_levels, dtype=float)
    return lv[None, :] if lv.ndim == 1 else lv


def displacement_exponent(traj_or_levels, checkpoints: Sequence[int]) -> float:
    """Mean over replicas of the least-squares slope of ln(X_n . l) against ln n.

    Accepts a trajectory, a level vector at the checkpoints, or a (replicas,
    checkpoints) array of levels.  Non-positive levels are skipped with a warning.
    """
    c = _check_checkpoints(checkpoints)
    L = _levels_at(traj_or_levels, checkpoints)
    if L.shape[1] != len(c):
        raise ValueError("levels do not match the checkpoints")
    slopes = []
    skipped = 0
    for row in L:
        ok = row > 0
        skipped += int((~ok).sum())
        if ok.sum() >= 2:
            slopes.append(np.polyfit(np.log(c[ok]), np.log(row[ok]), 1)[0])
    if skipped:
        warnings.warn(f"skipped {skipped} non-positive levels", RuntimeWarning, stacklevel=2)
    if not slopes:
        raise ValueError("no replica has two positive checkpoints")
    return float(np.mean(slopes))


# -- clock self-similarity ---------------------------------------------------------------------

def partial_sums(durations: Sequence[float], n: int, replicas: int, seed: int = 0,
                 stream: int = 0) -> np.ndarray:
    """Sums of n block durations per replica.

    Disjoint slices of the pool are used when it holds n * replicas values;
    otherwise blocks are resampled with replacement from a keyed generator.
    """
    x = np.asarray(durations, dtype=float)
    if len(x) >= n * replicas:
        return x[: n * replicas].reshape(replicas, n).sum(axis=1)
    rng = np.random.Generator(np.random.PCG64(derive_seed(seed, stream, n)))
    idx = rng.integers(0, len(x), size=(replicas, n))
    return x[idx].sum(axis=1)


def clock_selfsimilarity_test(block_durations: Sequence[float], n1: int, n2: int, replicas: int,
                              gamma: Optional[float] = None, law: Optional[ConductanceLaw] = None,
                              seed: int = 0) -> float:
    """KS p-value comparing tau_n1 / Inv(n1) with tau_n2 / Inv(n2).

    Inv comes from ``law`` when given and is n^(1/gamma) otherwise; a common
    constant factor in Inv does not affect the test.
    """
    if n2 < 4 * n1:
        raise ValueError("need n2 >= 4 n1")
    if replicas < 20:
        raise ValueError("need at least 20 replicas")
    x = np.asarray(block_durations, dtype=float)
    if len(x) < n1:
        raise ValueError("not enough blocks")
    if law is not None:
        inv: Callable[[float], float] = lambda n: inv_scale(law, n)
    elif gamma is not None:
        inv = lambda n: n ** (1.0 / gamma)
    else:
        raise ValueError("give gamma or law")
    # use separate halves of the pool so that the two samples do not share blocks when possible
    if len(x) >= replicas * (n1 + n2):
        a = x[: replicas * n1].reshape(replicas, n1).sum(axis=1)
        b = x[replicas * n1: replicas * (n1 + n2)].reshape(replicas, n2).sum(axis=1)
    else:
        a = partial_sums(x, n1, replicas, seed, 1)
        b = partial_sums(x, n2, replicas, seed, 2)
    return float(stats.ks_2samp(a / inv(n1), b / inv(n2)).pvalue)


def max_term_ratio(durations: Sequence[float], n: int, replicas: int, seed: int = 0) -> np.ndarray:
    """Largest term divided by the sum, for ``replicas`` partial sums of n durations."""
    x = np.asarray(durations, dtype=float)
    rng = np.random.Generator(np.random.PCG64(derive_seed(seed, 3, n)))
    idx = rng.integers(0, len(x), size=(replicas, n))
    v = x[idx]
    return v.max(axis=1) / v.sum(axis=1)


# -- transverse fluctuations -------------------------------------------------------------------

def estimate_sigma(displacements: np.ndarray) -> np.ndarray:
    """Sample covariance of per-block displacements."""
    D = np.asarray(displacements, dtype=float)
    if D.ndim != 2 or len(D) < 2:
        raise ValueError("need a (blocks, d) array with at least two rows")
    S = np.cov(D, rowvar=False)
    return 0.5 * (S + S.T)


def psd_sqrt(S: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def v0_from_displacements(displacements: np.ndarray, direction: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """(v_hat, v0_hat): mean block displacement and its direction with v0 . l > 0."""
    D = np.asarray(displacements, dtype=float)
    v = D.mean(axis=0)
    nv = np.linalg.norm(v)
    if nv == 0:
        raise ValueError("zero mean displacement")
    v0 = v / nv
    if v0 @ np.asarray(direction, dtype=float) < 0:
        v0 = -v0
    return v, v0


@dataclass
class FKCheck:
    slope: float
    Md_hat: np.ndarray
    v0_hat: np.ndarray
    sigma_hat: np.ndarray
    msd: np.ndarray
    rank_deficient: bool


def transverse_fk_check(positions: np.ndarray, checkpoints: Sequence[int], block_displacements: np.ndarray,
                        direction: Sequence[float]) -> FKCheck:
    """Slope of log E|(I - P_v0) X_n|^2 against log n, and Md_hat = (I - P_v0) sqrt(Sigma).

    ``positions`` has shape (replicas, checkpoints, d).
    """
    c = _check_checkpoints(checkpoints)
    X = np.asarray(positions, dtype=float)
    if X.ndim == 2:
        X = X[None]
    d = X.shape[2]
    if d < 2:
        raise ValueError("transverse fluctuations need d >= 2")
    _, v0 = v0_from_displacements(block_displacements, direction)
    P = np.outer(v0, v0)
    Q = np.eye(d) - P
    T = X @ Q.T
    msd = (T ** 2).sum(axis=2).mean(axis=0)
    ok = msd > 0
    slope = float(np.polyfit(np.log(c[ok]), np.log(msd[ok]), 1)[0])
    S = estimate_sigma(block_displacements)
    w = np.linalg.eigvalsh(S)
    rank_def = bool(w.min() <= 1e-12 * max(w.max(), 1e-300))
    Md = Q @ psd_sqrt(S)
    # remove round-off along v0 so that P_v0 Md vanishes to machine precision
    Md = Md - np.outer(v0, v0 @ Md)
    return FKCheck(slope, Md, v0, S, msd, rank_def)


# -- limit constants ---------------------------------------------------------------------------

def estimate_limit_constants(blocks: Sequence[RegenBlock], law: ConductanceLaw, n: float,
                             w_values: Optional[Sequence[float]] = None) -> Tuple[float, float]:
    """(C1_hat, C_infty_hat) from the LT(n) frequency and the W_n^gamma moment."""
    reg = [b for b in blocks if not b.initial]
    lt = [b for b in reg if b.max_conductance >= n]
    if not lt:
        raise ValueError("no LT(n) blocks")
    p_lt = len(lt) / len(reg)
    tail = float(law.tail(n))
    if tail <= 0:
        raise ValueError("P[c_* >= n] vanishes for this law")
    c1 = p_lt / tail
    if w_values is None:
        w_values = [b.W_n for b in lt if b.trap_edge is not None and b.trap_conductance > 0]
    m = float(np.mean(np.asarray(w_values, dtype=float) ** law.gamma))
    return c1, (c1 * m) ** (1.0 / law.gamma)


# -- report ------------------------------------------------------------------------------------

@dataclass
class ScalingReport:
    gamma_config: float
    gamma_from_blocks: Optional[TailFit] = None
    gamma_from_displacement: Optional[float] = None
    selfsim_pvalue: Optional[float] = None
    transverse_slope: Optional[float] = None
    v_hat: Optional[np.ndarray] = None
    v0_hat: Optional[np.ndarray] = None
    sigma_hat: Optional[np.ndarray] = None
    Md_hat: Optional[np.ndarray] = None
    C1_hat: Optional[float] = None
    C_infty_hat: Optional[float] = None
    notes: List[str] = dc_field(default_factory=list)
    extra: Dict[str, object] = dc_field(default_factory=dict)

    def to_dict(self) -> dict:
        def conv(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, TailFit):
                return asdict(v)
            if isinstance(v, (np.floating, np.integer)):
                return v.item()
            if isinstance(v, dict):
                return {k: conv(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [conv(x) for x in v]
            return v
        return {k: conv(v) for k, v in self.__dict__.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)
