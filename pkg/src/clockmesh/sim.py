"""Deterministic scenario engine.

Advances the per-node protocol under configured measurement noise and
scripted events (topology swaps, node failure/restart, offset or bias
injection), records offsets against the reference node, and computes the
reporting metrics: mean relative deviation, pooled 99th-percentile and
maximum centered offsets, and a quadratic drift fit.

Traces are bit-reproducible for a given seed: the random stream is drawn in
a fixed order every step regardless of which nodes or edges are active.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dynamics import ProtocolParams, SystemState
from .noise import NoiseSpec
from .topology import NotConnectedError, TopologySpec, build_graph_quantities

#: measured offsets whose change between consecutive polls exceeds this are
#: dropped when the spurious filter is enabled (seconds)
SPURIOUS_JUMP = 0.5

EVENT_KINDS = ("replace-topology", "disable-node", "enable-node", "inject-offset", "inject-bias")


@dataclass
class Event:
    """Scripted change applied at the start of its step.

    Replacing the topology swaps only the measurement graph (edges,
    weights, edge noise gains); node properties (skews, wander gains) stay
    with the scenario's base topology.
    """

    step: int
    kind: str
    node: Optional[int] = None
    edge: Optional[tuple[int, int]] = None
    seconds: float = 0.0
    topo: Optional[TopologySpec] = None

    def __post_init__(self) -> None:
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.kind == "replace-topology" and self.topo is None:
            raise ValueError("replace-topology event needs a topology")
        if self.kind in ("disable-node", "enable-node", "inject-offset") and self.node is None:
            raise ValueError(f"{self.kind} event needs a node")
        if self.kind == "inject-bias" and self.edge is None:
            raise ValueError("inject-bias event needs an edge")


@dataclass
class Scenario:
    """Everything one simulation run needs."""

    topo: TopologySpec
    params: ProtocolParams
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    steps: int = 1000
    events: Sequence[Event] = ()
    warmup: float = 0.2
    spurious_filter: bool = False
    init: Optional[SystemState] = None

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not 0.0 <= self.warmup < 1.0:
            raise ValueError("warmup fraction must be in [0, 1)")
        for ev in self.events:
            if not 0 <= ev.step < self.steps:
                raise ValueError(f"event step {ev.step} outside [0, {self.steps})")
            if ev.topo is not None and ev.topo.n != self.topo.n:
                raise ValueError("replacement topology must keep the node count")


@dataclass
class SimTrace:
    """Recorded run: per-step state views plus derived metrics.

    Offsets are microseconds against the reference node (the topology
    leader, else node 0); collective columns are computed against the base
    topology and are NaN when it is not connected.  ``drift_fit`` is the
    quadratic coefficient (s/step^2) of the mean client offset over the
    fault window (or the post-warmup window when nothing was disabled).
    """

    x: np.ndarray
    offsets_us: np.ndarray
    skews: np.ndarray
    xtilde: np.ndarray
    stilde: np.ndarray
    ytilde: np.ndarray
    ref: int
    tau: float
    warmup_steps: int
    fault_window: Optional[tuple[int, int]]
    sqrt_sn_us: float = np.nan
    ci99_us: float = np.nan
    ci100_us: float = np.nan
    mean_offsets_us: Optional[np.ndarray] = None
    drift_fit: float = 0.0

    @property
    def steps(self) -> int:
        return self.offsets_us.shape[0]

    @property
    def n(self) -> int:
        return self.offsets_us.shape[1]


class _ActiveTopology:
    """Cached per-edge arrays for the currently active measurement graph."""

    def __init__(self, topo: TopologySpec, noise: NoiseSpec):
        self.topo = topo
        self.tails = topo.tails
        self.heads = topo.heads
        self.alpha = topo.alpha
        self.gw = topo.gw
        self.keys = [(i, j) for i, j, _ in topo.edges]
        models = noise.edge_models(topo)
        kinds = np.array([mdl.kind for mdl in models])
        self.grid_idx = np.flatnonzero(kinds == "uniform-grid")
        self.grid_levels = np.array([models[e].levels for e in self.grid_idx], dtype=np.int64)
        self.grid_step = np.array([models[e].grid for e in self.grid_idx])
        self.gauss_idx = np.flatnonzero(kinds == "gaussian")
        self.gauss_sigma = np.array([models[e].sigma for e in self.gauss_idx])
        self.const = np.array([mdl.mean() for mdl in models])

    def sample_errors(self, rng: np.random.Generator) -> np.ndarray:
        """Per-edge measurement errors for one poll, drawn in fixed order."""
        err = self.const.copy()
        if self.grid_idx.size:
            draws = rng.integers(0, self.grid_levels, size=(2, self.grid_idx.size))
            err[self.grid_idx] += 0.5 * (draws[0] - draws[1]) * self.grid_step
        if self.gauss_idx.size:
            err[self.gauss_idx] += rng.standard_normal(self.gauss_idx.size) * self.gauss_sigma
        return err


def run(sc: Scenario) -> SimTrace:
    """Run one scenario; deterministic for a given noise seed."""
    n = sc.topo.n
    steps = sc.steps
    rng = np.random.default_rng(sc.noise.seed)
    state = sc.init.copy() if sc.init is not None else SystemState.initial(n)
    if state.n != n:
        raise ValueError("initial state dimension does not match the topology")
    x, s, y = state.x.copy(), state.s.copy(), state.y.copy()
    k1, k2, p, tau = sc.params.kappa1, sc.params.kappa2, sc.params.p, sc.params.tau
    r, gd = sc.topo.r, sc.topo.gd

    try:
        gq = build_graph_quantities(sc.topo)
        xi, gamma, rvec = gq.xi, gq.gamma, gq.r
        ref = gq.leader if gq.leader is not None else 0
    except NotConnectedError:
        gq, xi, gamma, rvec, ref = None, None, None, None, 0

    active = _ActiveTopology(sc.topo, sc.noise)
    enabled = np.ones(n, dtype=bool)
    bias: dict[tuple[int, int], float] = {}
    last_meas: dict[tuple[int, int], float] = {}
    events = sorted(enumerate(sc.events), key=lambda kv: (kv[1].step, kv[0]))
    ev_pos = 0
    fault_start, fault_end = None, None

    x_hist = np.empty((steps, n))
    off_hist = np.empty((steps, n))
    skew_hist = np.empty((steps, n))
    coll_hist = np.full((steps, 3), np.nan)

    wander = sc.noise.wander_sigma

    for k in range(steps):
        while ev_pos < len(events) and events[ev_pos][1].step == k:
            ev = events[ev_pos][1]
            ev_pos += 1
            if ev.kind == "replace-topology":
                active = _ActiveTopology(ev.topo, sc.noise)
            elif ev.kind == "disable-node":
                enabled[ev.node] = False
                if fault_start is None:
                    fault_start = k
            elif ev.kind == "enable-node":
                enabled[ev.node] = True
                if fault_start is not None and fault_end is None and k > fault_start:
                    fault_end = k
            elif ev.kind == "inject-offset":
                x[ev.node] += ev.seconds
            elif ev.kind == "inject-bias":
                bias[tuple(ev.edge)] = ev.seconds

        x_hist[k] = x
        off_hist[k] = (x - x[ref]) * 1e6
        skew_hist[k] = s
        if xi is not None:
            coll_hist[k, 0] = gamma * np.sum(xi * x / rvec)
            coll_hist[k, 1] = gamma * np.sum(xi * s)
            coll_hist[k, 2] = gamma * np.sum(xi * y)

        err = active.sample_errors(rng)
        wander_draw = rng.standard_normal(n) * wander if wander > 0.0 else None

        usable = enabled[active.tails] & enabled[active.heads]
        D = x[active.heads] - x[active.tails] + active.gw * err
        for e, key in enumerate(active.keys):
            if key in bias:
                D[e] += bias[key]
        if sc.spurious_filter:
            for e, key in enumerate(active.keys):
                if not usable[e]:
                    continue
                prev = last_meas.get(key)
                if prev is not None and abs(D[e] - prev) > SPURIOUS_JUMP:
                    usable[e] = False  # drop this poll, keep the old reference
                else:
                    last_meas[key] = D[e]

        agg = np.zeros(n)
        if usable.any():
            np.add.at(agg, active.tails[usable], active.alpha[usable] * D[usable])

        x = x + tau * r * s
        s_next = s + k1 * agg - k2 * y
        y_next = p * agg + (1.0 - p) * y
        if wander_draw is not None:
            s_next = s_next + gd * wander_draw
        s = np.where(enabled, s_next, s)
        y = np.where(enabled, y_next, y)

    warmup_steps = int(np.floor(sc.warmup * steps))
    fault_window = None
    if fault_start is not None:
        fault_window = (fault_start, fault_end if fault_end is not None else steps)

    trace = SimTrace(
        x=x_hist,
        offsets_us=off_hist,
        skews=skew_hist,
        xtilde=coll_hist[:, 0],
        stilde=coll_hist[:, 1],
        ytilde=coll_hist[:, 2],
        ref=ref,
        tau=tau,
        warmup_steps=warmup_steps,
        fault_window=fault_window,
    )
    if n > 1 and steps - warmup_steps >= 2:
        trace.sqrt_sn_us, trace.ci99_us, trace.ci100_us = metrics(trace, sc.warmup)
    means = off_hist[warmup_steps:].mean(axis=0)
    trace.mean_offsets_us = means
    window = fault_window if fault_window is not None else (warmup_steps, steps)
    if n > 1 and window[1] - window[0] >= 3:
        ks = np.arange(window[0], window[1])
        clients = [i for i in range(n) if i != ref]
        v_mean = off_hist[window[0] : window[1], clients].mean(axis=1) * 1e-6
        trace.drift_fit = float(np.polyfit(ks, v_mean, 2)[0])
    return trace


def metrics(trace: SimTrace, warmup: float = 0.2) -> tuple[float, float, float]:
    """(sqrt(S_n), CI99, CI100) in microseconds over post-warmup samples.

    S_n pools the per-client variance of the mean-centered offsets to the
    reference; CI99 / CI100 are the 99th percentile and maximum of the
    pooled centered magnitudes.
    """
    if not 0.0 <= warmup < 1.0:
        raise ValueError("warmup fraction must be in [0, 1)")
    start = int(np.floor(warmup * trace.steps))
    if trace.steps - start < 2:
        raise ValueError("need at least 2 post-warmup samples")
    clients = [i for i in range(trace.n) if i != trace.ref]
    if not clients:
        raise ValueError("metrics need at least one non-reference node")
    v = trace.offsets_us[start:, clients]
    centered = v - v.mean(axis=0, keepdims=True)
    sn = float(np.mean(centered**2, axis=0).mean())
    pooled = np.abs(centered).ravel()
    return float(np.sqrt(sn)), float(np.percentile(pooled, 99.0)), float(pooled.max())


def wheel_topology(
    n: int,
    K: int,
    c: float,
    r: Optional[np.ndarray] = None,
    gw_leader: float = 1.0,
    gw_ring: float = 1.0,
) -> TopologySpec:
    """Leader plus a ring of clients with 2K-neighbor cross-connections.

    Every client polls the leader (node 0) and its K nearest ring neighbors
    on each side, bidirectionally; weights are c / (number of neighbors).
    K = 0 is a star; K = (n-2)/2 makes the client set complete.
    """
    if n < 3:
        raise ValueError("wheel needs n >= 3")
    if not 0 <= K <= (n - 2) // 2:
        raise ValueError(f"K must be in [0, {(n - 2) // 2}] for n = {n}")
    clients = list(range(1, n))
    nc = len(clients)
    deg = 2 * K + 1
    edges = []
    gw = []
    for ci, i in enumerate(clients):
        edges.append((i, 0, c / deg))
        gw.append(gw_leader)
        for d in range(1, K + 1):
            for other in (clients[(ci + d) % nc], clients[(ci - d) % nc]):
                edges.append((i, other, c / deg))
                gw.append(gw_ring)
    return TopologySpec(n=n, edges=edges, r=r, gw=np.array(gw))


def relative_frequency_error(trace: SimTrace, node: int, lag: int = 1) -> np.ndarray:
    """Diagnostic rate-error series from two offset samples ``lag`` polls
    apart: (D(t) - D(t - lag*tau)) / (x(t) - x(t - lag*tau)) with D the
    offset to the reference.  Samples with a zero denominator are NaN."""
    if lag < 1:
        raise ValueError("lag must be >= 1")
    D = (trace.x[:, trace.ref] - trace.x[:, node])
    xn = trace.x[:, node]
    num = D[lag:] - D[:-lag]
    den = xn[lag:] - xn[:-lag]
    out = np.full(num.shape, np.nan)
    nz = den != 0.0
    out[nz] = num[nz] / den[nz]
    return out


def quadratic_drift_fit(
    trace: SimTrace, node: int, window: Optional[tuple[int, int]] = None
) -> float:
    """Least-squares quadratic coefficient (s/step^2) of one node's offset.

    Defaults to the fault window when the run disabled a node, else the
    post-warmup window.
    """
    if window is None:
        window = trace.fault_window if trace.fault_window is not None else (
            trace.warmup_steps,
            trace.steps,
        )
    lo, hi = window
    if hi - lo < 10:
        raise ValueError("need at least 10 samples in the fit window")
    ks = np.arange(lo, hi)
    v = trace.offsets_us[lo:hi, node] * 1e-6
    return float(np.polyfit(ks, v, 2)[0])
