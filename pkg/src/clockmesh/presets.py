"""Built-in topologies, scenarios and optimizer setups.

Scenario presets:
    loop-instability (alias exp1)  client-server phase, then a client loop
                                   appears and the poll interval is too long
    wheel-jitter     (alias exp2)  ring-connected clients sharing one noisy
                                   time source
    leader-loss      (alias exp5)  leader disabled mid-run under a small
                                   measurement bias; rate drifts, offsets
                                   grow parabolically until restart

Optimizer presets: "jitter", "wander", "both" gain profiles on a 3-hop
ladder of 7 nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import ProtocolParams, SystemState
from .noise import Jitter, NoiseSpec
from .sim import Event, Scenario, wheel_topology
from .topology import TopologySpec

#: default protocol gains used across the presets
DEFAULT_PARAMS = dict(kappa1=1.1, kappa2=1.0, p=0.99)


def two_node(c: float = 0.7) -> TopologySpec:
    """Client polling a leader with weight c."""
    return TopologySpec(n=2, edges=[(1, 0, c)])


def three_node_loop(c: float = 0.7) -> TopologySpec:
    """Leader plus two mutually connected clients (a timing loop).

    Each client has two neighbors, so every weight is c/2 and the largest
    Laplacian eigenvalue is 1.5 c.
    """
    a = c / 2.0
    return TopologySpec(
        n=3, edges=[(1, 0, a), (2, 0, a), (1, 2, a), (2, 1, a)]
    )


def ladder7(c: float = 0.7) -> TopologySpec:
    """Three-hop ladder: leader, then mutually-connected client pairs."""
    a = c / 2.0
    edges = [
        (1, 0, a), (2, 0, a), (1, 2, a), (2, 1, a),
        (3, 1, a), (4, 2, a), (3, 4, a), (4, 3, a),
        (5, 3, a), (6, 4, a), (5, 6, a), (6, 5, a),
    ]
    return TopologySpec(n=7, edges=edges)


_SCENARIO_ALIASES = {"exp1": "loop-instability", "exp2": "wheel-jitter", "exp5": "leader-loss"}


def scenario_preset(name: str, steps: int | None = None, seed: int | None = None) -> Scenario:
    """Build one of the named scenarios; steps and seed are overridable."""
    name = _SCENARIO_ALIASES.get(name, name)
    if name == "loop-instability":
        # phase A: plain client-server at tau = 1 s (stable); then a second
        # client appears and forms a loop, pushing the largest eigenvalue
        # past the admissible range for this poll interval
        steps = 4000 if steps is None else steps
        base = TopologySpec(n=3, edges=[(1, 0, 0.7)])
        params = ProtocolParams(tau=1.0, **DEFAULT_PARAMS)
        init = SystemState.initial(3, x=[0.0, 2e-3, 5e-3])
        switch = min(60, max(1, steps // 3))
        events = [Event(step=switch, kind="replace-topology", topo=three_node_loop(0.7))]
        return Scenario(
            topo=base,
            params=params,
            noise=NoiseSpec(seed=0 if seed is None else seed),
            steps=steps,
            events=events,
            init=init,
        )
    if name == "wheel-jitter":
        n, K = 10, 4
        topo = wheel_topology(n, K, c=0.7)
        jitter_edges = {
            (i, 0): Jitter.uniform_grid(10e-3, 1e-3) for i in range(1, n)
        }
        noise = NoiseSpec(
            jitter=Jitter.none(),
            jitter_edges=jitter_edges,
            seed=2025 if seed is None else seed,
        )
        params = ProtocolParams(tau=0.5, **DEFAULT_PARAMS)
        return Scenario(
            topo=topo,
            params=params,
            noise=noise,
            steps=20000 if steps is None else steps,
        )
    if name == "leader-loss":
        steps = 4000 if steps is None else steps
        topo = three_node_loop(0.7)
        params = ProtocolParams(tau=0.5, **DEFAULT_PARAMS)
        events = [
            Event(step=0, kind="inject-bias", edge=(1, 2), seconds=5e-6),
            Event(step=steps // 4, kind="disable-node", node=0),
            Event(step=(3 * steps) // 4, kind="enable-node", node=0),
        ]
        return Scenario(
            topo=topo,
            params=params,
            noise=NoiseSpec(seed=0 if seed is None else seed),
            steps=steps,
            events=events,
        )
    raise ValueError(f"unknown scenario preset {name!r}")


@dataclass
class OptimizeSetup:
    """Topology, gain profile and options for one optimization preset."""

    topo: TopologySpec
    init: ProtocolParams
    gw: np.ndarray
    gd: np.ndarray
    rho_star: float = 0.999
    max_iter: int = 60


def optimize_preset(name: str) -> OptimizeSetup:
    """Gain profiles for the jitter / wander tradeoff on the 7-node ladder.

    Leader links carry the jitter gain; wander applies to every client but
    not the reference clock.
    """
    topo = ladder7(0.7)
    m = topo.m
    leader_edges = [e for e, (_, j, _) in enumerate(topo.edges) if j == 0]
    gw = np.ones(m)
    gd_clients = np.ones(topo.n)
    gd_clients[0] = 0.0
    if name == "jitter":
        gw[leader_edges] = 100.0
        gd = 1e-3 * gd_clients
    elif name == "wander":
        gd = 1e-1 * gd_clients
    elif name == "both":
        gw[leader_edges] = 100.0
        gd = 1e-1 * gd_clients
    else:
        raise ValueError(f"unknown optimize preset {name!r}")
    return OptimizeSetup(
        topo=topo,
        init=ProtocolParams(tau=0.5, **DEFAULT_PARAMS),
        gw=gw,
        gd=gd,
    )
