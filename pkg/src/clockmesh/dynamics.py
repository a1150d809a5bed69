"""Exact discrete-time dynamics of the synchronization protocol.

Per poll interval tau each node advances its time estimate by its corrected
rate, adjusts the rate from the weighted neighbor offsets and an exponential
average of past offsets, and refreshes that average:

    x_i' = x_i + tau * r_i * s_i
    s_i' = s_i + kappa1 * sum_j alpha_ij * D_ij - kappa2 * y_i
    y_i' = p * sum_j alpha_ij * D_ij + (1 - p) * y_i

with D_ij = x_j - x_i the measured offset.  The same update in stacked form
is z' = A z; this module builds A, the collective/deviation projectors and
the noise input matrices, and steps states in either representation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Union

import numpy as np

from .topology import GraphQuantities, TopologySpec


@dataclass(frozen=True)
class ProtocolParams:
    """Protocol gains (kappa1, kappa2, p) and poll interval tau (seconds)."""

    kappa1: float
    kappa2: float
    p: float
    tau: float

    def __post_init__(self) -> None:
        if not self.tau > 0.0:
            raise ValueError("poll interval tau must be > 0")

    @property
    def delta_kappa(self) -> float:
        return self.kappa1 - self.kappa2


@dataclass
class SystemState:
    """Per-node state at step k: time estimate x (s), rate correction s,
    offset average y (s)."""

    x: np.ndarray
    s: np.ndarray
    y: np.ndarray
    k: int = 0

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=float)
        self.s = np.asarray(self.s, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        n = self.x.shape[0]
        if self.s.shape != (n,) or self.y.shape != (n,):
            raise ValueError("x, s, y must all have length n")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @classmethod
    def initial(cls, n: int, x=None, s=None, y=None) -> "SystemState":
        """Default start: x = 0, s = 1 (uncorrected rate), y = 0."""
        x = np.zeros(n) if x is None else np.asarray(x, dtype=float).copy()
        s = np.ones(n) if s is None else np.asarray(s, dtype=float).copy()
        y = np.zeros(n) if y is None else np.asarray(y, dtype=float).copy()
        return cls(x=x, s=s, y=y, k=0)

    def copy(self) -> "SystemState":
        return SystemState(self.x.copy(), self.s.copy(), self.y.copy(), self.k)

    def stacked(self) -> np.ndarray:
        """Stacked 3n vector (x, s, y)."""
        return np.concatenate([self.x, self.s, self.y])

    @classmethod
    def from_stacked(cls, z: np.ndarray, k: int = 0) -> "SystemState":
        n = z.shape[0] // 3
        return cls(z[:n].copy(), z[n : 2 * n].copy(), z[2 * n :].copy(), k)


@dataclass
class SystemMatrices:
    """One-step matrices for a (topology, params, gains) instance.

    A advances the stacked state, N projects onto the deviation subspace
    (idempotent), A_hat = N @ A drives the deviations, A_tilde the 3x3
    collective, B_w / B_d inject measurement noise and wander, and C maps
    the state to the offsets against the reference node.
    """

    A: np.ndarray
    N: np.ndarray
    A_hat: np.ndarray
    A_tilde: np.ndarray
    B_w: np.ndarray
    B_d: np.ndarray
    C: np.ndarray
    params: ProtocolParams
    n: int
    ref: int


def build_matrices(
    topo: TopologySpec,
    params: ProtocolParams,
    gq: GraphQuantities,
    gw: Optional[np.ndarray] = None,
    gd: Optional[np.ndarray] = None,
) -> SystemMatrices:
    """Assemble the stacked one-step matrix and its companions.

    ``gw`` / ``gd`` override the topology's noise gains (used when folding a
    concrete noise model's standard deviation into the linear picture).
    """
    n, m = topo.n, topo.m
    k1, k2, p, tau = params.kappa1, params.kappa2, params.p, params.tau
    L = gq.L
    r = topo.r
    In = np.eye(n)
    Z = np.zeros((n, n))

    A = np.block(
        [
            [In, tau * np.diag(r), Z],
            [-k1 * L, In, -k2 * In],
            [-p * L, Z, (1.0 - p) * In],
        ]
    )

    xi, gamma = gq.xi, gq.gamma
    N1 = In - gamma * np.outer(np.ones(n), xi / r)
    N2 = In - gamma * np.outer(1.0 / r, xi)
    N = np.block([[N1, Z, Z], [Z, N2, Z], [Z, Z, N2]])

    A_tilde = np.array([[1.0, tau, 0.0], [0.0, 1.0, -k2], [0.0, 0.0, 1.0 - p]])

    gw = topo.gw if gw is None else np.asarray(gw, dtype=float)
    gd = topo.gd if gd is None else np.asarray(gd, dtype=float)
    edge_gain = gq.BG_minus @ np.diag(topo.alpha * gw) if m else np.zeros((n, 0))
    B_w = np.vstack([np.zeros((n, m)), -k1 * edge_gain, -p * edge_gain])
    B_d = np.vstack([Z, np.diag(gd), Z])

    ref = gq.leader if gq.leader is not None else 0
    C = np.zeros((n - 1, 3 * n)) if n > 1 else np.zeros((0, 3))
    row = 0
    for i in range(n):
        if i == ref:
            continue
        C[row, i] = 1.0
        C[row, ref] = -1.0
        row += 1

    return SystemMatrices(
        A=A,
        N=N,
        A_hat=N @ A,
        A_tilde=A_tilde,
        B_w=B_w,
        B_d=B_d,
        C=C,
        params=params,
        n=n,
        ref=ref,
    )


def step_matrix(z: SystemState, M: SystemMatrices) -> SystemState:
    """Noiseless step in stacked form: z' = A z."""
    if z.n != M.n:
        raise ValueError("state dimension does not match matrices")
    return SystemState.from_stacked(M.A @ z.stacked(), z.k + 1)


OffsetInput = Union[np.ndarray, Mapping[tuple[int, int], float]]


def _offsets_array(topo: TopologySpec, offsets: OffsetInput) -> np.ndarray:
    if isinstance(offsets, Mapping):
        out = np.empty(topo.m)
        for e, (i, j, _) in enumerate(topo.edges):
            if (i, j) not in offsets:
                raise ValueError(f"missing offset for edge ({i}, {j})")
            out[e] = offsets[(i, j)]
        return out
    arr = np.asarray(offsets, dtype=float)
    if arr.shape != (topo.m,):
        raise ValueError(f"expected {topo.m} per-edge offsets, got shape {arr.shape}")
    return arr


def measured_offsets(topo: TopologySpec, x: np.ndarray) -> np.ndarray:
    """Noiseless per-edge offsets D_ij = x_j - x_i, aligned with topo.edges."""
    if topo.m == 0:
        return np.zeros(0)
    return x[topo.heads] - x[topo.tails]


def weighted_offset_sums(topo: TopologySpec, offsets: np.ndarray) -> np.ndarray:
    """Per-node sum over its edges of alpha_ij * D_ij."""
    agg = np.zeros(topo.n)
    if topo.m:
        np.add.at(agg, topo.tails, topo.alpha * offsets)
    return agg


def step_protocol(
    z: SystemState,
    topo: TopologySpec,
    params: ProtocolParams,
    offsets: OffsetInput,
) -> SystemState:
    """Per-node protocol step from measured offsets (one value per edge).

    With noiseless offsets this equals ``step_matrix`` up to floating-point
    association order.
    """
    D = _offsets_array(topo, offsets)
    agg = weighted_offset_sums(topo, D)
    x = z.x + params.tau * topo.r * z.s
    s = z.s + params.kappa1 * agg - params.kappa2 * z.y
    y = params.p * agg + (1.0 - params.p) * z.y
    return SystemState(x, s, y, z.k + 1)


def step_naive(
    z: SystemState,
    topo: TopologySpec,
    params: ProtocolParams,
    offsets: OffsetInput,
) -> SystemState:
    """Rate-only correction without the offset average (no y state).

    Kept as the instability baseline: driving the rate from raw offsets
    alone oscillates with growing amplitude for every tau > 0.
    """
    D = _offsets_array(topo, offsets)
    agg = weighted_offset_sums(topo, D)
    x = z.x + params.tau * topo.r * z.s
    s = z.s + params.kappa1 * agg
    return SystemState(x, s, z.y.copy(), z.k + 1)


def decompose(z: SystemState, gq: GraphQuantities) -> tuple[np.ndarray, np.ndarray]:
    """Split a state into the collective 3-vector and the stacked deviation.

    Returns ``(ztilde, dz)`` where ztilde = (x~, s~, y~) with
    x~ = gamma * sum_i xi_i x_i / r_i, s~ = gamma * sum_i xi_i s_i,
    y~ = gamma * sum_i xi_i y_i, and dz stacks (x - x~*1, s - s~/r, y - y~/r).
    Reconstruction is exact: z = dz + (x~*1, s~/r, y~/r).
    """
    xi, gamma, r = gq.xi, gq.gamma, gq.r
    xt = gamma * float(np.sum(xi * z.x / r))
    st = gamma * float(np.sum(xi * z.s))
    yt = gamma * float(np.sum(xi * z.y))
    dz = np.concatenate([z.x - xt, z.s - st / r, z.y - yt / r])
    return np.array([xt, st, yt]), dz
