"""Shared random-instance generators and independent oracles for the tests.

Graph families with real Laplacian spectra: directed trees (triangular
Laplacian), symmetric graphs, and symmetric client graphs under a leader.
The Monte Carlo oracle propagates the full stacked dynamics with sampled
white noise and never touches the Lyapunov route it is used to check.
"""

from __future__ import annotations

import numpy as np

import clockmesh as cm


def random_tree(rng: np.random.Generator, n: int) -> cm.TopologySpec:
    """Every node past the root polls one earlier node."""
    edges = [
        (i, int(rng.integers(0, i)), float(rng.uniform(0.2, 1.0)))
        for i in range(1, n)
    ]
    return cm.TopologySpec(n=n, edges=edges, r=_skews(rng, n))


def random_symmetric(rng: np.random.Generator, n: int) -> cm.TopologySpec:
    """Connected undirected graph, both directions with equal weight."""
    pairs = {(i, int(rng.integers(0, i))) for i in range(1, n)}  # spanning tree
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < 0.25:
                pairs.add((j, i))
    edges = []
    for j, i in pairs:
        a = float(rng.uniform(0.2, 1.0))
        edges.append((i, j, a))
        edges.append((j, i, a))
    return cm.TopologySpec(n=n, edges=edges, r=_skews(rng, n))


def random_symmetric_leader(rng: np.random.Generator, n: int) -> cm.TopologySpec:
    """Node 0 polls nobody; clients are symmetric among themselves and at
    least one polls the leader."""
    assert n >= 2
    clients = list(range(1, n))
    edges = []
    if len(clients) > 1:
        for idx in range(1, len(clients)):
            a = float(rng.uniform(0.2, 1.0))
            i, j = clients[idx], clients[int(rng.integers(0, idx))]
            edges.append((i, j, a))
            edges.append((j, i, a))
        for ii in range(len(clients)):
            for jj in range(ii + 1, len(clients)):
                if rng.random() < 0.2 and (clients[ii], clients[jj]) not in {(u, v) for u, v, _ in edges}:
                    a = float(rng.uniform(0.2, 1.0))
                    edges.append((clients[ii], clients[jj], a))
                    edges.append((clients[jj], clients[ii], a))
    polled = [i for i in clients if rng.random() < 0.6]
    if not polled:
        polled = [clients[0]]
    for i in polled:
        edges.append((i, 0, float(rng.uniform(0.2, 1.0))))
    return cm.TopologySpec(n=n, edges=edges, r=_skews(rng, n))


def random_directed_cycle(rng: np.random.Generator, n: int) -> cm.TopologySpec:
    """One-way ring (complex Laplacian spectrum for n >= 3)."""
    edges = [(i, (i + 1) % n, float(rng.uniform(0.3, 1.0))) for i in range(n)]
    return cm.TopologySpec(n=n, edges=edges, r=_skews(rng, n))


def _skews(rng: np.random.Generator, n: int) -> np.ndarray:
    return 1.0 + rng.uniform(-5e-4, 5e-4, size=n)


def random_real_spectrum_topo(rng: np.random.Generator, n: int) -> cm.TopologySpec:
    family = rng.integers(0, 3)
    if family == 0:
        return random_tree(rng, n)
    if family == 1:
        return random_symmetric(rng, n)
    return random_symmetric_leader(rng, n)


def random_feasible_params(rng: np.random.Generator, tau: float = 1.0) -> cm.ProtocolParams:
    """Gains satisfying the scalar synchronization conditions with margin."""
    p = float(rng.uniform(0.3, 1.7))
    k1 = float(rng.uniform(0.5, 1.5))
    dk = float(rng.uniform(0.05, 0.9)) * 2.0 * k1 / (3.0 * p)
    return cm.ProtocolParams(k1, k1 - dk, p, tau)


def stable_instance(
    rng: np.random.Generator,
    n_range=(2, 6),
    rho_cap: float = 0.95,
    require_leader: bool = False,
    max_tries: int = 200,
):
    """(topo, params, gq, M) with a connected real-spectrum graph and
    rho(deviation map) <= rho_cap."""
    for _ in range(max_tries):
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        topo = (
            random_symmetric_leader(rng, n)
            if require_leader
            else random_real_spectrum_topo(rng, n)
        )
        try:
            gq = cm.build_graph_quantities(topo)
        except cm.NotConnectedError:
            continue
        if require_leader and gq.leader is None:
            continue
        base = random_feasible_params(rng)
        verdict = cm.check_parameter_conditions(topo, base, gq)
        if verdict.tau_max is None or not np.isfinite(verdict.tau_max) or verdict.tau_max <= 0:
            continue
        params = cm.ProtocolParams(
            base.kappa1, base.kappa2, base.p, float(rng.uniform(0.2, 0.7)) * verdict.tau_max
        )
        M = cm.build_matrices(topo, params, gq)
        rho, stable = cm.stability_oracle(M)
        if stable and rho <= rho_cap:
            return topo, params, gq, M
    raise RuntimeError("could not draw a stable instance")


def mc_rms(
    M: cm.SystemMatrices,
    rng: np.random.Generator,
    replicas: int = 256,
    steps: int = 4096,
) -> float:
    """Monte Carlo estimate of the stationary RMS of the offsets to the
    reference under unit white noise, by direct stochastic propagation of
    the full stacked dynamics (independent of the Lyapunov route)."""
    A = M.A
    B = np.hstack([M.B_w, M.B_d])
    C = M.C
    rho, _ = cm.stability_oracle(M)
    warm = int(np.ceil(np.log(1e-3) / np.log(rho))) if 0 < rho < 1 else 200
    warm = min(max(warm, 50), 20000)
    dim, nin = B.shape
    Z = np.zeros((dim, replicas))
    for _ in range(warm):
        Z = A @ Z + B @ rng.standard_normal((nin, replicas))
    acc = 0.0
    for _ in range(steps):
        Z = A @ Z + B @ rng.standard_normal((nin, replicas))
        V = C @ Z
        acc += float(np.sum(V * V))
    return float(np.sqrt(acc / (steps * replicas)))
