"""Exact linear algebra on finite weighted networks.

These routines serve as oracles for the closed-form trap computations: absorption
probabilities, killed Green functions, expected edge crossings and effective
resistance.  Every system is written in Laplacian form, restricted to the
non-absorbing vertices, which makes it symmetric positive definite on connected
inputs.  Small systems are solved densely and large ones by conjugate gradients.

Fixture grammar (one directive per line, ``#`` starts a comment)::

    vertices <n>             vertex ids are 0 .. n-1
    edge <u> <v> <c>         undirected edge with conductance c > 0 (repeatable)
    absorbing <id>           optional distinguished vertex
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import cg

DENSE_LIMIT = 2000
SOLVER_RTOL = 1e-12


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class FiniteNetwork:
    """Undirected weighted graph on vertices 0 .. n-1; parallel edges are allowed."""

    n_vertices: int
    edges: Tuple[Tuple[int, int, float], ...]
    absorbing: Optional[int] = None

    def __post_init__(self):
        edges = tuple((int(u), int(v), float(c)) for u, v, c in self.edges)
        object.__setattr__(self, "edges", edges)
        n = int(self.n_vertices)
        if n < 1:
            raise NetworkError("network needs at least one vertex")
        for u, v, c in edges:
            if not (0 <= u < n and 0 <= v < n):
                raise NetworkError(f"edge ({u}, {v}) references an unknown vertex")
            if u == v:
                raise NetworkError("self-loops are not allowed")
            if not c > 0 or not np.isfinite(c):
                raise NetworkError("conductances must be positive and finite")
        if self.absorbing is not None and not 0 <= self.absorbing < n:
            raise NetworkError("absorbing vertex is not in the vertex set")
        if n > 1:
            ncomp, _ = connected_components(self.adjacency(), directed=False)
            if ncomp != 1:
                raise NetworkError("network is disconnected")

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric conductance matrix with parallel edges summed."""
        n = self.n_vertices
        if not self.edges:
            return sp.csr_matrix((n, n))
        u = np.array([e[0] for e in self.edges])
        v = np.array([e[1] for e in self.edges])
        c = np.array([e[2] for e in self.edges])
        a = sp.coo_matrix((np.r_[c, c], (np.r_[u, v], np.r_[v, u])), shape=(n, n))
        return a.tocsr()

    def laplacian(self) -> sp.csr_matrix:
        a = self.adjacency()
        return (sp.diags(np.asarray(a.sum(axis=1)).ravel()) - a).tocsr()

    def transition_matrix(self) -> np.ndarray:
        a = self.adjacency().toarray()
        return a / a.sum(axis=1, keepdims=True)


def stationary_measure(net: FiniteNetwork) -> np.ndarray:
    """pi(x) = sum of conductances at x (unnormalized)."""
    if net.absorbing is not None:
        raise NetworkError("stationary measure is defined for networks without an absorbing vertex")
    return np.asarray(net.adjacency().sum(axis=1)).ravel()


def _solve_spd(A: sp.csr_matrix, B: np.ndarray) -> np.ndarray:
    """Solve A X = B for symmetric positive definite A; B may have several columns."""
    B = np.asarray(B, dtype=float)
    if A.shape[0] == 0:
        return np.zeros_like(B)
    if A.shape[0] <= DENSE_LIMIT:
        try:
            return scipy.linalg.solve(A.toarray(), B, assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
            raise NetworkError(f"singular system: {exc}") from exc
    cols = B.reshape(B.shape[0], -1)
    out = np.empty_like(cols)
    diag = A.diagonal()
    precond = sp.diags(1.0 / diag)
    for k in range(cols.shape[1]):
        x, info = cg(A, cols[:, k], rtol=SOLVER_RTOL, atol=0.0, M=precond, maxiter=20 * A.shape[0])
        if info != 0:
            raise NetworkError("iterative solver did not converge")
        out[:, k] = x
    return out.reshape(B.shape)


def _split(net: FiniteNetwork, absorbing: Sequence[int]):
    absorbing = list(dict.fromkeys(int(a) for a in absorbing))
    mask = np.ones(net.n_vertices, dtype=bool)
    mask[absorbing] = False
    interior = np.flatnonzero(mask)
    return absorbing, interior


def _harmonic_solve(net: FiniteNetwork, interior: np.ndarray, boundary: np.ndarray,
                    source: np.ndarray, refinements: int = 2) -> np.ndarray:
    """Interior values x with sum_y c_xy (x_x - x_y) = source_x, boundary values fixed.

    The assembled diagonal rounds away conductances far below their neighbours'.
    Each pass therefore solves for a correction against the residual taken in edge
    form, sum_y c_xy (x_y - x_x), which avoids that cancellation and keeps the
    answer accurate on strongly heterogeneous networks.
    """
    L_ii = net.laplacian()[interior][:, interior].tocsr()
    u = np.array([e[0] for e in net.edges])
    v = np.array([e[1] for e in net.edges])
    c = np.array([e[2] for e in net.edges])[:, None]
    full = np.array(boundary, dtype=float)
    X = np.zeros_like(source, dtype=float)
    for _ in range(refinements + 1):
        full[interior] = X
        flux = c * (full[v] - full[u])
        res = np.zeros_like(full)
        np.add.at(res, u, flux)
        np.add.at(res, v, -flux)
        X = X + _solve_spd(L_ii, source + res[interior])
    return X


def exit_distribution(net: FiniteNetwork, start: int, absorbing_set: Iterable[int]) -> np.ndarray:
    """Absorption probabilities, ordered like ``absorbing_set``, for the walk from ``start``."""
    absorbing = [int(a) for a in absorbing_set]
    if not absorbing:
        raise NetworkError("absorbing set is empty")
    if len(set(absorbing)) != len(absorbing):
        raise NetworkError("absorbing set has duplicates")
    if start in absorbing:
        raise NetworkError("start must not be absorbing")
    absorbing, interior = _split(net, absorbing)
    # harmonic extension of each indicator: zero net current at interior vertices
    boundary = np.zeros((net.n_vertices, len(absorbing)))
    boundary[absorbing, np.arange(len(absorbing))] = 1.0
    H = _harmonic_solve(net, interior, boundary, np.zeros((len(interior), len(absorbing))))
    row = int(np.searchsorted(interior, start))
    return np.asarray(H[row]).ravel()


def green_killed(net: FiniteNetwork, start: int, killed: Optional[Iterable[int]] = None) -> np.ndarray:
    """G(start, x): expected visits to x before hitting the killed set (0 on the killed set)."""
    killed = [net.absorbing] if killed is None else list(killed)
    if not killed or killed[0] is None:
        raise NetworkError("no killed vertex given")
    killed, interior = _split(net, killed)
    pi = np.asarray(net.adjacency().sum(axis=1)).ravel()
    e = np.zeros((len(interior), 1))
    e[int(np.searchsorted(interior, start))] = 1.0
    # voltages v = L^{-1} 1_start and G(start, x) = pi(x) v(x)
    v = _harmonic_solve(net, interior, np.zeros((net.n_vertices, 1)), e)[:, 0]
    G = np.zeros(net.n_vertices)
    G[interior] = pi[interior] * v
    return G


def expected_crossings(net: FiniteNetwork, start: int, counted_edges: Iterable[int]) -> float:
    """Expected traversals, in either direction, of the listed edges before absorption.

    ``counted_edges`` are indices into ``net.edges``.  A crossing from x to z has
    expectation c(x, z) v(x), where v = G(start, .) / pi is the unit-current voltage.
    """
    if net.absorbing is None:
        raise NetworkError("expected_crossings needs an absorbing vertex")
    if start == net.absorbing:
        raise NetworkError("start must differ from the absorbing vertex")
    G = green_killed(net, start)
    pi = np.asarray(net.adjacency().sum(axis=1)).ravel()
    v = G / pi
    total = 0.0
    for k in counted_edges:
        u, w, c = net.edges[int(k)]
        total += c * v[u] + c * v[w]
    return float(total)


def effective_resistance(net: FiniteNetwork, a: int, b: int) -> float:
    """Two-point effective resistance from harmonic voltages with b grounded."""
    if a == b:
        raise NetworkError("effective resistance needs two distinct vertices")
    _, interior = _split(net, [b])
    e = np.zeros((len(interior), 1))
    ia = int(np.searchsorted(interior, a))
    e[ia] = 1.0
    return float(_harmonic_solve(net, interior, np.zeros((net.n_vertices, 1)), e)[ia, 0])


# -- fixture text format -----------------------------------------------------------------------

def parse_network(text: str) -> FiniteNetwork:
    n = None
    edges: List[Tuple[int, int, float]] = []
    absorbing = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "vertices" and len(parts) == 2:
                n = int(parts[1])
            elif parts[0] == "edge" and len(parts) == 4:
                edges.append((int(parts[1]), int(parts[2]), float(parts[3])))
            elif parts[0] == "absorbing" and len(parts) == 2:
                absorbing = int(parts[1])
            else:
                raise NetworkError(f"line {lineno}: cannot parse {raw!r}")
        except ValueError as exc:
            if isinstance(exc, NetworkError):
                raise
            raise NetworkError(f"line {lineno}: bad number in {raw!r}") from exc
    if n is None:
        raise NetworkError("missing 'vertices' line")
    return FiniteNetwork(n, tuple(edges), absorbing)


def format_network(net: FiniteNetwork) -> str:
    lines = [f"vertices {net.n_vertices}"]
    lines += [f"edge {u} {v} {c!r}" for u, v, c in net.edges]
    if net.absorbing is not None:
        lines.append(f"absorbing {net.absorbing}")
    return "\n".join(lines) + "\n"


def load_network(path: Union[str, Path]) -> FiniteNetwork:
    return parse_network(Path(path).read_text())


def star_edge_network(c_e: float, adj_plus: Sequence[float], adj_minus: Sequence[float]):
    """Edge 0-1 with pendant neighbours; returns (net, exit vertex ids plus side, minus side).

    Vertex 0 is e+, vertex 1 is e-, and every pendant neighbour is its own vertex,
    so absorbing all pendants gives the exit law of the edge.
    """
    edges = [(0, 1, float(c_e))]
    plus_ids, minus_ids = [], []
    nxt = 2
    for c in adj_plus:
        edges.append((0, nxt, float(c)))
        plus_ids.append(nxt)
        nxt += 1
    for c in adj_minus:
        edges.append((1, nxt, float(c)))
        minus_ids.append(nxt)
        nxt += 1
    return FiniteNetwork(nxt, tuple(edges)), plus_ids, minus_ids
