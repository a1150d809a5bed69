"""Directed measurement graphs and the spectral quantities derived from them.

A topology describes which node polls which: an edge ``(i, j, alpha)`` means
node ``i`` measures its offset to node ``j`` and weighs that measurement by
``alpha > 0``.  Everything downstream (Laplacian, incidence factorization,
left null vector, leader detection, eigenvalue bounds) is derived here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class NotConnectedError(ValueError):
    """Raised when an operation requires a connected measurement graph."""


def _as_float_vector(values, n: int, name: str, default: float) -> np.ndarray:
    if values is None:
        return np.full(n, default, dtype=float)
    arr = np.asarray(values, dtype=float)
    if arr.shape == ():
        return np.full(n, float(arr), dtype=float)
    if arr.shape != (n,):
        raise ValueError(f"{name} must have length {n}, got shape {arr.shape}")
    return arr.copy()


@dataclass
class TopologySpec:
    """Directed measurement graph with per-node skews and noise gains.

    Attributes:
        n: node count (>= 1); nodes are indexed 0..n-1.
        edges: sequence of ``(i, j, alpha)``; node i polls node j with
            weight ``alpha > 0``.  No self edges, no duplicate (i, j) pairs.
        r: per-node internal skew (rate of the local oscillator relative
            to true time), all > 0.  Defaults to 1.0.
        gw: per-edge measurement-noise gain, aligned with ``edges``.
            Defaults to 1.0.
        gd: per-node wander gain.  Defaults to 1.0.
    """

    n: int
    edges: Sequence[tuple[int, int, float]]
    r: Optional[np.ndarray] = None
    gw: Optional[np.ndarray] = None
    gd: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("node count must be >= 1")
        self.edges = tuple((int(i), int(j), float(a)) for i, j, a in self.edges)
        seen = set()
        for i, j, a in self.edges:
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge ({i}, {j}) out of range for n={self.n}")
            if i == j:
                raise ValueError(f"self edge at node {i}")
            if (i, j) in seen:
                raise ValueError(f"duplicate edge ({i}, {j})")
            if not a > 0.0:
                raise ValueError(f"edge ({i}, {j}) has non-positive weight {a}")
            seen.add((i, j))
        self.r = _as_float_vector(self.r, self.n, "r", 1.0)
        if np.any(self.r <= 0.0):
            raise ValueError("all skews r must be > 0")
        self.gw = _as_float_vector(self.gw, self.m, "gw", 1.0) if self.m else np.zeros(0)
        self.gd = _as_float_vector(self.gd, self.n, "gd", 1.0)

    @property
    def m(self) -> int:
        return len(self.edges)

    @property
    def alpha(self) -> np.ndarray:
        """Edge weights aligned with ``edges``."""
        return np.array([a for _, _, a in self.edges], dtype=float)

    @property
    def tails(self) -> np.ndarray:
        """Measuring node of each edge."""
        return np.array([i for i, _, _ in self.edges], dtype=int)

    @property
    def heads(self) -> np.ndarray:
        """Measured node of each edge."""
        return np.array([j for _, j, _ in self.edges], dtype=int)

    def edge_index(self, i: int, j: int) -> int:
        for e, (u, v, _) in enumerate(self.edges):
            if u == i and v == j:
                return e
        raise KeyError(f"no edge ({i}, {j})")

    def neighbor_weight_sums(self) -> np.ndarray:
        """Row sums of edge weights (the Laplacian diagonal)."""
        out = np.zeros(self.n)
        for i, _, a in self.edges:
            out[i] += a
        return out


@dataclass
class GraphQuantities:
    """Graph-derived matrices and scalars for one topology.

    ``xi`` is the normalized left null vector of the Laplacian (sums to 1),
    ``gamma`` the xi-weighted harmonic mean of the skews, ``mu_max`` the
    largest eigenvalue modulus of L*R and ``alpha_max`` the largest
    Laplacian diagonal entry.
    """

    L: np.ndarray
    BG: np.ndarray
    BG_minus: np.ndarray
    xi: np.ndarray
    gamma: float
    leader: Optional[int]
    mu_max: float
    alpha_max: float
    r: np.ndarray = field(default=None)  # per-node skews, copied from the topology


def laplacian(topo: TopologySpec) -> np.ndarray:
    """Weighted Laplacian: diagonal = outgoing weight sums, off-diagonal -alpha."""
    L = np.zeros((topo.n, topo.n))
    for i, j, a in topo.edges:
        L[i, i] += a
        L[i, j] -= a
    return L


def incidence(topo: TopologySpec) -> np.ndarray:
    """Incidence matrix with one column per edge: +1 at the measured node,
    -1 at the measuring node.  With this orientation
    ``L == min(BG, 0) @ diag(alpha) @ BG.T`` holds exactly."""
    BG = np.zeros((topo.n, topo.m))
    for e, (i, j, _) in enumerate(topo.edges):
        BG[j, e] = 1.0
        BG[i, e] = -1.0
    return BG


def is_connected(topo: TopologySpec, L: Optional[np.ndarray] = None) -> bool:
    """Connectivity in the sense that the Laplacian zero eigenvalue is simple.

    Uses the numerical rank of L with tolerance 1e-9 * ||L||.
    """
    if L is None:
        L = laplacian(topo)
    if topo.n == 1:
        return True
    svals = np.linalg.svd(L, compute_uv=False)
    tol = 1e-9 * max(svals[0], 1.0)
    rank = int(np.sum(svals > tol))
    return rank == topo.n - 1


def find_leader(topo: TopologySpec) -> Optional[int]:
    """Unique node with no outgoing measurement edges that every other node
    can reach along edge direction.  None when no such node exists."""
    out_deg = np.zeros(topo.n, dtype=int)
    rev: list[list[int]] = [[] for _ in range(topo.n)]
    for i, j, _ in topo.edges:
        out_deg[i] += 1
        rev[j].append(i)  # who measures j, i.e. who can reach j in one hop
    for cand in range(topo.n):
        if out_deg[cand] != 0:
            continue
        # breadth-first over reversed edges: nodes that reach cand
        seen = np.zeros(topo.n, dtype=bool)
        seen[cand] = True
        stack = [cand]
        while stack:
            v = stack.pop()
            for u in rev[v]:
                if not seen[u]:
                    seen[u] = True
                    stack.append(u)
        if seen.all():
            return cand
    return None


def left_null_vector(topo: TopologySpec, L: Optional[np.ndarray] = None) -> np.ndarray:
    """Normalized left null vector xi of the Laplacian (sum(xi) = 1).

    Solved from the bordered linear system (L^T + (1/n) 1 1^T) v = (1/n) 1,
    which is nonsingular exactly when the zero eigenvalue is simple.

    Raises:
        NotConnectedError: when the graph is not connected (xi not unique).
    """
    if L is None:
        L = laplacian(topo)
    if not is_connected(topo, L):
        raise NotConnectedError("measurement graph is not connected: xi not unique")
    n = topo.n
    ones = np.ones(n)
    v = np.linalg.solve(L.T + np.outer(ones, ones) / n, ones / n)
    return v / v.sum()


def mu_max_exact(topo: TopologySpec) -> float:
    """Largest eigenvalue modulus of L*R (R = diag of skews)."""
    if topo.m == 0:
        return 0.0
    LR = laplacian(topo) * topo.r[np.newaxis, :]  # L @ diag(r)
    return float(np.max(np.abs(np.linalg.eigvals(LR))))


def mu_max_gershgorin(topo: TopologySpec, r_hat_max: float) -> float:
    """Topology-free disc bound 2 * alpha_max * r_hat_max (>= mu_max_exact)."""
    if r_hat_max < np.max(topo.r):
        raise ValueError("r_hat_max must upper-bound every node skew")
    alpha_max = float(np.max(topo.neighbor_weight_sums())) if topo.n else 0.0
    return 2.0 * alpha_max * r_hat_max


def build_graph_quantities(topo: TopologySpec) -> GraphQuantities:
    """Derive every graph-dependent quantity for one topology.

    Raises:
        NotConnectedError: when the graph is not connected.
    """
    L = laplacian(topo)
    xi = left_null_vector(topo, L)
    gamma = 1.0 / float(np.sum(xi / topo.r))
    BG = incidence(topo)
    return GraphQuantities(
        L=L,
        BG=BG,
        BG_minus=np.minimum(BG, 0.0),
        xi=xi,
        gamma=gamma,
        leader=find_leader(topo),
        mu_max=mu_max_exact(topo),
        alpha_max=float(np.max(topo.neighbor_weight_sums())),
        r=topo.r.copy(),
    )
