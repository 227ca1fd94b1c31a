"""Quenched random environment on the edges of Z^d.

Conductances are never stored: each one is recomputed on demand from a keyed
hash of (seed, canonical edge), so the field is an immutable value that can be
shared freely between workers and rebuilt bit-exactly from its configuration.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field as dc_field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import _core

Vertex = Tuple[int, ...]

_KINDS = {"constant": _core.LAW_PARETO, "log_power": _core.LAW_LOG_POWER, "bounded": _core.LAW_UNIFORM}


@dataclass(frozen=True)
class ConductanceLaw:
    """Law of a single conductance c_*.

    ``slowly_varying`` selects the tail T(t) = P[c_* > t]:

    * ``"constant"``: T(t) = (t / x_min)^(-gamma) (pure Pareto);
    * ``"log_power"``: T(t) = (t / x_min)^(-gamma) * (log(e+t) / log(e+x_min))^beta;
    * ``"bounded"``: uniform on [lo, hi]; a light-tailed control, gamma unused.
    """

    gamma: float = 0.5
    slowly_varying: str = "constant"
    beta: float = 0.0
    x_min: float = 1.0
    lo: float = 1.0
    hi: float = 1.0

    def __post_init__(self):
        if self.slowly_varying not in _KINDS:
            raise ValueError(f"unknown slowly_varying {self.slowly_varying!r}")
        if self.slowly_varying == "bounded":
            if not (0 < self.lo <= self.hi):
                raise ValueError("bounded law needs 0 < lo <= hi")
            return
        if not (0.0 < self.gamma < 1.0):
            raise ValueError("gamma must lie in (0, 1)")
        if self.x_min <= 0:
            raise ValueError("x_min must be positive")
        if self.slowly_varying == "log_power" and not self._log_power_monotone():
            raise ValueError("log_power tail is not non-increasing for this (gamma, beta)")

    def _log_power_monotone(self) -> bool:
        # d/dt log T = -gamma/t + beta / ((e+t) log(e+t)) must stay <= 0
        ts = self.x_min * np.logspace(0, 12, 2000)
        deriv = -self.gamma / ts + self.beta / ((math.e + ts) * np.log(math.e + ts))
        return bool(np.all(deriv <= 1e-15))

    @property
    def kind(self) -> int:
        return _KINDS[self.slowly_varying]

    @property
    def params(self) -> np.ndarray:
        return np.array([self.gamma, self.beta, self.x_min, self.lo, self.hi], dtype=np.float64)

    @property
    def heavy(self) -> bool:
        return self.slowly_varying != "bounded"

    def tail(self, t):
        """P[c_* > t] (vectorized)."""
        t = np.asarray(t, dtype=float)
        if self.slowly_varying == "bounded":
            if self.hi == self.lo:
                return np.where(t < self.lo, 1.0, 0.0)
            return np.clip((self.hi - t) / (self.hi - self.lo), 0.0, 1.0)
        tt = np.maximum(t, self.x_min)
        out = (tt / self.x_min) ** (-self.gamma)
        if self.slowly_varying == "log_power":
            out = out * (np.log(math.e + tt) / math.log(math.e + self.x_min)) ** self.beta
        return np.where(t < self.x_min, 1.0, out)

    def cdf(self, t):
        return 1.0 - self.tail(t)

    def quantile(self, u: float) -> float:
        """The value Q(u) with T(Q(u)) = u, u in (0, 1]."""
        return float(_core.quantile(float(u), self.kind, self.params))

    def to_dict(self) -> dict:
        return {"gamma": self.gamma, "slowly_varying": self.slowly_varying, "beta": self.beta,
                "x_min": self.x_min, "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class LatticeEdge:
    """Unit non-oriented edge, stored with its lexicographically smaller endpoint first."""

    a: Vertex
    b: Vertex

    def __post_init__(self):
        a = tuple(int(v) for v in self.a)
        b = tuple(int(v) for v in self.b)
        if len(a) != len(b):
            raise ValueError("endpoints of different dimension")
        diff = [y - x for x, y in zip(a, b)]
        if sorted(abs(v) for v in diff) != [0] * (len(a) - 1) + [1]:
            raise ValueError(f"{a} and {b} are not nearest neighbours")
        if b < a:
            a, b = b, a
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_lower(cls, x: Sequence[int], axis: int) -> "LatticeEdge":
        y = list(x)
        y[axis] += 1
        return cls(tuple(x), tuple(y))

    @property
    def axis(self) -> int:
        return next(i for i, (x, y) in enumerate(zip(self.a, self.b)) if x != y)

    @property
    def lower(self) -> Vertex:
        # for a unit edge the lexicographically smaller endpoint is the one with the smaller coordinate
        return self.a

    def other(self, v: Vertex) -> Vertex:
        return self.b if tuple(v) == self.a else self.a

    def __contains__(self, v) -> bool:
        v = tuple(v)
        return v == self.a or v == self.b


class ConductanceField:
    """Lazily evaluated conductance field with bias and K-classification.

    ``overrides`` maps edges to fixed conductances; it exists for fixtures and for
    conditioning the neighbourhood of a planted trap.
    """

    def __init__(self, law: ConductanceLaw, seed: int = 0, dimension: int = 2, K: float = 20.0,
                 bias_lambda: float = 1.0, bias_direction: Optional[Sequence[float]] = None,
                 overrides: Optional[Dict[LatticeEdge, float]] = None):
        if dimension < 2:
            raise ValueError("dimension must be at least 2")
        if K < 1:
            raise ValueError("K must be >= 1")
        if bias_lambda <= 0:
            raise ValueError("bias_lambda must be positive")
        direction = np.zeros(dimension) if bias_direction is None else np.asarray(bias_direction, float)
        if bias_direction is None:
            direction[0] = 1.0
        if direction.shape != (dimension,):
            raise ValueError("bias_direction has the wrong length")
        norm = float(np.linalg.norm(direction))
        if norm == 0:
            raise ValueError("bias_direction must be non-zero")
        direction = direction / norm
        if np.any(direction < -1e-15) or np.any(np.diff(direction) > 1e-15):
            raise ValueError("bias_direction must satisfy e_1.l >= ... >= e_d.l >= 0")
        self.law = law
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.dimension = int(dimension)
        self.K = float(K)
        self.bias_lambda = float(bias_lambda)
        self.direction = direction
        self.direction.setflags(write=False)
        self.overrides = dict(overrides or {})
        d = self.dimension
        keys = np.zeros((len(self.overrides), d + 1), dtype=np.int64)
        vals = np.zeros(len(self.overrides))
        for r, (e, c) in enumerate(sorted(self.overrides.items(), key=lambda kv: (kv[0].a, kv[0].b))):
            if c <= 0:
                raise ValueError("override conductances must be positive")
            keys[r, :d] = e.lower
            keys[r, d] = e.axis
            vals[r] = c
        self._okeys = keys
        self._ovals = vals
        self._lp = law.params
        units = np.concatenate([np.eye(d), -np.eye(d)])
        self._expw = np.exp(self.bias_lambda * units @ self.direction)
        self._useed = np.uint64(self.seed)

    # -- low level handles for compiled code -------------------------------------------------
    @property
    def core_args(self):
        """(seed, kind, law params, override keys, override values) as passed to _core."""
        return self._useed, self.law.kind, self._lp, self._okeys, self._ovals

    @property
    def expw(self) -> np.ndarray:
        """exp(lambda e_j . l) for the 2d directions in core order."""
        return self._expw

    @property
    def ell(self) -> np.ndarray:
        return self.bias_lambda * self.direction

    def with_overrides(self, extra: Dict[LatticeEdge, float]) -> "ConductanceField":
        merged = dict(self.overrides)
        merged.update(extra)
        return ConductanceField(self.law, self.seed, self.dimension, self.K, self.bias_lambda,
                                self.direction, merged)

    def with_K(self, K: float) -> "ConductanceField":
        return ConductanceField(self.law, self.seed, self.dimension, K, self.bias_lambda,
                                self.direction, self.overrides)

    def config(self) -> dict:
        return {"dimension": self.dimension, "law": self.law.to_dict(), "K": self.K,
                "lambda": self.bias_lambda, "direction": [float(v) for v in self.direction],
                "seed": self.seed, "overrides": len(self.overrides)}

    # -- queries ---------------------------------------------------------------------------
    def c(self, x: Sequence[int], axis: int) -> float:
        """c_* of the edge [x, x + e_axis]."""
        return float(_core.conductance(*self.core_args, np.asarray(x, dtype=np.int64), int(axis)))

    def incident(self, x: Sequence[int]) -> np.ndarray:
        """c_* of the 2d edges at x, directions +e_1..+e_d then -e_1..-e_d."""
        cs = np.empty(2 * self.dimension)
        _core.incident(*self.core_args, np.array(x, dtype=np.int64), cs)
        return cs

    def level(self, x) -> float:
        return float(np.dot(np.asarray(x, float), self.direction))


def conductance_of(field: ConductanceField, edge) -> float:
    """c_*(edge); ``edge`` is a LatticeEdge or a pair of endpoints."""
    if not isinstance(edge, LatticeEdge):
        a, b = edge
        edge = LatticeEdge(tuple(a), tuple(b))
    if len(edge.a) != field.dimension:
        raise ValueError("edge dimension does not match the field")
    return field.c(edge.lower, edge.axis)


def _is_open(field: ConductanceField, x) -> bool:
    cs = field.incident(x)
    return bool(np.all((cs >= 1.0 / field.K) & (cs <= field.K)))


def classify_vertex(field: ConductanceField, x) -> str:
    """'open' iff all 2d incident edges are K-normal, else 'closed'."""
    return "open" if _is_open(field, x) else "closed"


@dataclass
class GoodCertificate:
    status: str  # "good_certified", "bad_certified" or "unknown"
    depth: int  # certified depth (good) or deepest depth reached
    witness: Optional[List[Vertex]] = None

    def __eq__(self, other):
        if isinstance(other, str):
            return self.status == other
        return (self.status, self.depth) == (other.status, other.depth)


def certify_good(field: ConductanceField, x, depth: int = 32, node_cap: int = 1_000_000) -> GoodCertificate:
    """Search a directed K-open path of ``depth`` steps starting at x.

    Odd steps are +e_1, even steps any +e_j.  Every step raises the coordinate sum by
    one, so a vertex determines its step index and dead ends can be memoized.  The
    lexicographically first witness (e_1 tried before e_2, ...) is returned.
    """
    if depth < 2:
        raise ValueError("depth must be >= 2")
    d = field.dimension
    x0 = tuple(int(v) for v in x)
    open_cache: Dict[Vertex, bool] = {}

    def is_open(v):
        r = open_cache.get(v)
        if r is None:
            r = open_cache[v] = _is_open(field, v)
        return r

    if not is_open(x0):
        return GoodCertificate("bad_certified", 0)
    dead = set()
    path = [x0]
    # stack of iterators over child choices
    choices = [0]
    deepest = 0
    nodes = 0
    while path:
        i = len(path) - 1
        deepest = max(deepest, i)
        if i == depth:
            return GoodCertificate("good_certified", depth, list(path))
        nxt = None
        allowed = [0] if i % 2 == 0 else list(range(d))
        while choices[-1] < len(allowed):
            axis = allowed[choices[-1]]
            choices[-1] += 1
            v = list(path[-1])
            v[axis] += 1
            v = tuple(v)
            nodes += 1
            if nodes > node_cap:
                return GoodCertificate("unknown", deepest)
            if v in dead or not is_open(v):
                continue
            nxt = v
            break
        if nxt is None:
            dead.add(path.pop())
            choices.pop()
        else:
            path.append(nxt)
            choices.append(0)
    return GoodCertificate("bad_certified", deepest)


@dataclass
class BadCluster:
    anchor: Vertex
    members: List[Vertex] = dc_field(default_factory=list)
    width: int = 0
    truncated: bool = False


def cluster_width(members: Iterable[Sequence[int]]) -> int:
    """max over axes of (max coordinate - min coordinate)."""
    arr = np.asarray(list(members), dtype=np.int64)
    if arr.size == 0:
        return 0
    return int((arr.max(axis=0) - arr.min(axis=0)).max())


def explore_bad_cluster(field: ConductanceField, x, cap: int = 100_000, depth: int = 32) -> BadCluster:
    """Breadth-first exploration of the component of non-good vertices containing x."""
    if cap < 1:
        raise ValueError("cap must be >= 1")
    x0 = tuple(int(v) for v in x)
    d = field.dimension

    def bad(v):
        return certify_good(field, v, depth).status != "good_certified"

    if not bad(x0):
        return BadCluster(x0, [], 0, False)
    seen = {x0}
    members = [x0]
    queue = deque([x0])
    truncated = False
    while queue:
        v = queue.popleft()
        for i in range(d):
            for s in (1, -1):
                w = list(v)
                w[i] += s
                w = tuple(w)
                if w in seen:
                    continue
                seen.add(w)
                if bad(w):
                    if len(members) >= cap:
                        truncated = True
                        continue
                    members.append(w)
                    queue.append(w)
    return BadCluster(x0, members, cluster_width(members), truncated)
