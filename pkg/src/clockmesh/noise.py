"""Noise modeling and closed-loop performance: drift and steady offsets
under biased measurements, H2 norm of the deviation dynamics under white
noise, analytic gradients, and a projected-gradient parameter optimizer.

The linear noise picture is normalized: white inputs have unit variance and
every scale lives in the gain vectors (per-edge ``gw``, per-node ``gd``).
Concrete sampling models (grid-quantized ping-pong jitter, Gaussian jitter,
constant bias, Gaussian wander) report their mean and standard deviation so
they can be folded into those gains.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .analysis import (
    UnstableSystemError,
    scalar_condition_violations,
    spectral_radius,
    stability_oracle,
)
from .dynamics import ProtocolParams, SystemMatrices, build_matrices
from .topology import GraphQuantities, TopologySpec, build_graph_quantities


# ---------------------------------------------------------------------------
# noise specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Jitter:
    """Per-edge offset-measurement error model.

    kinds:
        none          no measurement error
        uniform-grid  ping-pong error (eta_fwd - eta_bwd)/2 with each eta
                      uniform on the grid {0, grid, 2*grid, ..., max_value}
        gaussian      zero-mean Gaussian error with std sigma
        constant      deterministic bias wbar every poll
    All values are seconds; the edge gain gw multiplies the sampled error.
    """

    kind: str = "none"
    max_value: float = 0.0
    grid: float = 0.0
    sigma: float = 0.0
    wbar: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("none", "uniform-grid", "gaussian", "constant"):
            raise ValueError(f"unknown jitter kind {self.kind!r}")
        if self.sigma < 0.0 or self.max_value < 0.0:
            raise ValueError("jitter scales must be >= 0")
        if self.kind == "uniform-grid" and self.max_value > 0.0 and not self.grid > 0.0:
            raise ValueError("uniform-grid jitter needs a positive grid")

    @classmethod
    def none(cls) -> "Jitter":
        return cls("none")

    @classmethod
    def uniform_grid(cls, max_value: float, grid: float) -> "Jitter":
        return cls("uniform-grid", max_value=max_value, grid=grid)

    @classmethod
    def gaussian(cls, sigma: float) -> "Jitter":
        return cls("gaussian", sigma=sigma)

    @classmethod
    def constant(cls, wbar: float) -> "Jitter":
        return cls("constant", wbar=wbar)

    @property
    def levels(self) -> int:
        """Grid point count of the uniform-grid model."""
        if self.kind != "uniform-grid" or self.max_value == 0.0:
            return 1
        return int(round(self.max_value / self.grid)) + 1

    def mean(self) -> float:
        """Mean error per poll; nonzero only for the constant model."""
        return self.wbar if self.kind == "constant" else 0.0

    def std(self) -> float:
        """Standard deviation of the sampled error.

        The ping-pong difference of two grid uniforms has variance
        grid^2 (levels^2 - 1) / 24.
        """
        if self.kind == "gaussian":
            return self.sigma
        if self.kind == "uniform-grid":
            q = self.levels
            return self.grid * np.sqrt((q * q - 1) / 24.0)
        return 0.0


@dataclass
class NoiseSpec:
    """Noise configuration for a simulation run.

    ``jitter`` applies to every edge unless overridden per edge in
    ``jitter_edges`` (keyed by (i, j)).  Wander adds gd_i * N(0, sigma^2)
    to each enabled node's rate every step.  ``seed`` fixes the stream.
    """

    jitter: Jitter = field(default_factory=Jitter.none)
    jitter_edges: dict = field(default_factory=dict)
    wander_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.wander_sigma < 0.0:
            raise ValueError("wander_sigma must be >= 0")

    def edge_models(self, topo: TopologySpec) -> list[Jitter]:
        return [self.jitter_edges.get((i, j), self.jitter) for i, j, _ in topo.edges]

    def effective_gains(self, topo: TopologySpec) -> tuple[np.ndarray, np.ndarray]:
        """(gw_eff, gd_eff) folding each model's std into the topology gains,
        so the unit-variance linear picture matches this sampling model."""
        gw_eff = topo.gw * np.array([mdl.std() for mdl in self.edge_models(topo)])
        gd_eff = topo.gd * self.wander_sigma
        return gw_eff, gd_eff

    def edge_means(self, topo: TopologySpec) -> np.ndarray:
        """Per-edge mean measurement error before the gw gain (seconds)."""
        return np.array([mdl.mean() for mdl in self.edge_models(topo)])


# ---------------------------------------------------------------------------
# biased-noise predictions
# ---------------------------------------------------------------------------

def _wbar_array(topo: TopologySpec, wbar) -> np.ndarray:
    if isinstance(wbar, Mapping):
        out = np.zeros(topo.m)
        for (i, j), v in wbar.items():
            out[topo.edge_index(i, j)] = v
        return out
    arr = np.asarray(wbar, dtype=float)
    if arr.shape != (topo.m,):
        raise ValueError(f"expected {topo.m} per-edge means, got shape {arr.shape}")
    return arr


def drift_rate(
    topo: TopologySpec, gq: GraphQuantities, params: ProtocolParams, wbar
) -> float:
    """Per-step change of the collective rate under constant measurement bias.

    Equals (kappa1 - kappa2) * wt with wt = -xi^T BG_minus diag(alpha*gw) wbar,
    i.e. the xi-weighted aggregate of the biased edge inputs.  Zero for every
    wbar exactly when the graph has a unique leader.
    """
    w = _wbar_array(topo, wbar)
    if topo.m == 0:
        return 0.0
    wt = -float(gq.xi @ gq.BG_minus @ (topo.alpha * topo.gw * w))
    return params.delta_kappa * wt


def steady_state_offsets(
    topo: TopologySpec, gq: GraphQuantities, params: ProtocolParams, wbar
) -> np.ndarray:
    """Limit of the per-node time deviations under constant measurement bias.

    Requires a unique leader and a synchronizing instance; the deviations in
    rate and offset average vanish and the time deviations converge to
    N1 L^+ dw with dw = -N2 BG_minus diag(alpha*gw) wbar.
    """
    if gq.leader is None:
        raise ValueError("steady offsets require a topology with a unique leader")
    M = build_matrices(topo, params, gq)
    rho, stable = stability_oracle(M)
    if not stable:
        raise UnstableSystemError(f"system does not synchronize (rho = {rho})")
    w = _wbar_array(topo, wbar)
    n = topo.n
    win = gq.BG_minus @ (topo.alpha * topo.gw * w) if topo.m else np.zeros(n)
    N1 = M.N[:n, :n]
    N2 = M.N[n : 2 * n, n : 2 * n]
    dw = -N2 @ win
    L_pinv = np.linalg.pinv(gq.L, rcond=1e-10)
    return N1 @ (L_pinv @ dw)


# ---------------------------------------------------------------------------
# H2 norm and gradients
# ---------------------------------------------------------------------------

def lyapunov_sum(M: np.ndarray, Q: np.ndarray, tol: float = 1e-14, max_doublings: int = 64) -> np.ndarray:
    """Fixed point of S = M^T S M + Q for rho(M) < 1, by squaring doublings:
    S_j = sum_{k < 2^j} (M^T)^k Q M^k converges quadratically."""
    S = np.array(Q, dtype=float)
    Mk = np.array(M, dtype=float)
    for _ in range(max_doublings):
        upd = Mk.T @ S @ Mk
        S = S + upd
        if np.linalg.norm(upd) <= tol * np.linalg.norm(S):
            return S
        Mk = Mk @ Mk
    raise RuntimeError("Lyapunov doubling iteration did not converge; is rho(M) < 1?")


@dataclass
class H2Result:
    """Steady-state output RMS under unit white noise, with both Gramians.

    ``f`` comes from the observability form trace(X B B^T); the
    controllability form trace(C Y C^T) must agree to 1e-9 relative.
    """

    f: float
    X: np.ndarray
    Y: np.ndarray
    rho: float


def _input_matrix(M: SystemMatrices) -> np.ndarray:
    B = np.hstack([M.B_w, M.B_d])
    return M.N @ B


def h2_norm(M: SystemMatrices) -> H2Result:
    """H2 norm of the deviation dynamics: the stationary RMS of the offsets
    to the reference node when every noise input is unit white noise.

    Raises:
        UnstableSystemError: if the deviation map has spectral radius >= 1.
    """
    rho = spectral_radius(M.A_hat)
    if rho >= 1.0:
        raise UnstableSystemError(f"unstable plant: rho = {rho}")
    B_hat = _input_matrix(M)
    C_hat = M.C
    X = lyapunov_sum(M.A_hat, C_hat.T @ C_hat)
    Y = lyapunov_sum(M.A_hat.T, B_hat @ B_hat.T)
    f = float(np.sqrt(max(0.0, np.trace(X @ B_hat @ B_hat.T))))
    return H2Result(f=f, X=X, Y=Y, rho=rho)


def h2_norm_pair(M: SystemMatrices) -> tuple[float, float]:
    """(observability-form, controllability-form) values of the H2 norm."""
    res = h2_norm(M)
    f_y = float(np.sqrt(max(0.0, np.trace(M.C @ res.Y @ M.C.T))))
    return res.f, f_y


def _with_edge_weights(topo: TopologySpec, alpha: np.ndarray) -> TopologySpec:
    edges = tuple((i, j, float(a)) for (i, j, _), a in zip(topo.edges, alpha))
    return TopologySpec(n=topo.n, edges=edges, r=topo.r, gw=topo.gw, gd=topo.gd)


def h2_gradient(
    topo: TopologySpec,
    params: ProtocolParams,
    gq: GraphQuantities,
    gw: Optional[np.ndarray] = None,
    gd: Optional[np.ndarray] = None,
    include_alpha: bool = False,
    fd_step: float = 1e-6,
) -> dict:
    """Partial derivatives of the H2 norm.

    (kappa1, kappa2, p) are analytic: with gradients of f with respect to
    the closed-loop matrices

        grad_A = X A Y / f,   grad_B = X B / f,

    chain through the constant partials of A and B in each parameter (the
    deviation projector does not depend on them).  Edge-weight partials are
    central finite differences because the projector depends on the weights
    through the left null vector.
    """
    M = build_matrices(topo, params, gq, gw=gw, gd=gd)
    res = h2_norm(M)
    if res.f == 0.0:
        raise ValueError("gradient undefined at zero norm")
    B_hat = _input_matrix(M)
    grad_A = res.X @ M.A_hat @ res.Y / res.f
    grad_B = res.X @ B_hat / res.f

    n, m = topo.n, topo.m
    L = gq.L
    Z = np.zeros((n, n))
    In = np.eye(n)
    gw_vec = topo.gw if gw is None else np.asarray(gw, dtype=float)
    edge_gain = gq.BG_minus @ np.diag(topo.alpha * gw_vec) if m else np.zeros((n, 0))

    def chain(dA_blocks, dBw_blocks) -> float:
        dA = np.block(dA_blocks)
        dB = np.hstack([np.vstack(dBw_blocks), np.zeros((3 * n, n))])
        return float(np.sum(grad_A * (M.N @ dA)) + np.sum(grad_B * (M.N @ dB)))

    out = {
        "kappa1": chain(
            [[Z, Z, Z], [-L, Z, Z], [Z, Z, Z]],
            [np.zeros((n, m)), -edge_gain, np.zeros((n, m))],
        ),
        "kappa2": chain(
            [[Z, Z, Z], [Z, Z, -In], [Z, Z, Z]],
            [np.zeros((n, m)), np.zeros((n, m)), np.zeros((n, m))],
        ),
        "p": chain(
            [[Z, Z, Z], [Z, Z, Z], [-L, Z, -In]],
            [np.zeros((n, m)), np.zeros((n, m)), -edge_gain],
        ),
    }

    if include_alpha:
        grads = np.zeros(m)
        base_alpha = topo.alpha
        for e in range(m):
            h = fd_step * max(1.0, abs(base_alpha[e]))
            fs = []
            for sign in (+1.0, -1.0):
                a = base_alpha.copy()
                a[e] += sign * h
                t2 = _with_edge_weights(topo, a)
                g2 = build_graph_quantities(t2)
                fs.append(h2_norm(build_matrices(t2, params, g2, gw=gw, gd=gd)).f)
            grads[e] = (fs[0] - fs[1]) / (2.0 * h)
        out["alpha"] = grads
    return out

# ---------------------------------------------------------------------------
# parameter optimization
# ---------------------------------------------------------------------------

@dataclass
class OptRecord:
    """One accepted optimizer iterate."""

    iter: int
    f: float
    rho: float
    kappa1: float
    kappa2: float
    p: float


_FREE_DEFAULT = ("kappa1", "kappa2", "p")


def _project_params(k1: float, k2: float, p: float) -> tuple[float, float, float]:
    """Clip (kappa1, kappa2, p) into the open feasible set of the scalar
    synchronization conditions (strict inequalities kept by tiny margins)."""
    p = float(np.clip(p, 1e-6, 2.0 - 1e-6))
    k1 = max(k1, 1e-9)
    dk_hi = 2.0 * k1 / (3.0 * p) * (1.0 - 1e-9)
    dk_lo = 1e-12 * max(1.0, k1)
    dk = float(np.clip(k1 - k2, dk_lo, dk_hi))
    return k1, k1 - dk, p


def optimize_params(
    topo: TopologySpec,
    init: ProtocolParams,
    rho_star: float = 0.999,
    max_iter: int = 100,
    gw: Optional[np.ndarray] = None,
    gd: Optional[np.ndarray] = None,
    free: Sequence[str] = _FREE_DEFAULT,
    fd_step: float = 1e-6,
) -> tuple[ProtocolParams, list[OptRecord]]:
    """Minimize the H2 norm over the protocol parameters.

    Projected gradient descent with backtracking line search over the free
    parameters (default kappa1, kappa2, p; "tau" may be freed, its partial
    taken by central differences).  Every accepted iterate satisfies the
    scalar synchronization conditions and rho(deviation map) <= rho_star,
    and the accepted objective sequence is non-increasing.

    Returns the best parameters and the trace of accepted iterates.

    Raises:
        ValueError: when no feasible starting point can be reached.
    """
    unknown = set(free) - {"kappa1", "kappa2", "p", "tau"}
    if unknown:
        raise ValueError(f"unknown free parameters: {sorted(unknown)}")

    gq = build_graph_quantities(topo)

    def evaluate(k1, k2, p, tau):
        """(f, rho) when feasible, (None, rho) when not."""
        params = ProtocolParams(k1, k2, p, tau)
        if scalar_condition_violations(params):
            return None, np.inf
        M = build_matrices(topo, params, gq, gw=gw, gd=gd)
        rho = spectral_radius(M.A_hat)
        if rho > rho_star:
            return None, rho
        return h2_norm(M).f, rho

    k1, k2, p, tau = init.kappa1, init.kappa2, init.p, init.tau
    reasons = scalar_condition_violations(init)
    if reasons:
        raise ValueError(
            "initial parameters violate the scalar synchronization conditions: "
            + "; ".join(reasons)
        )

    # pre-phase: shrink the gains jointly until the radius constraint holds
    f, rho = evaluate(k1, k2, p, tau)
    shrink = 0
    while f is None and shrink < 80:
        k1, k2 = 0.5 * k1, 0.5 * k2
        f, rho = evaluate(k1, k2, p, tau)
        shrink += 1
    if f is None:
        raise ValueError("no stable starting point found")

    records = [OptRecord(0, f, rho, k1, k2, p)]
    step = None
    for it in range(1, max_iter + 1):
        grads = h2_gradient(topo, ProtocolParams(k1, k2, p, tau), gq, gw=gw, gd=gd)
        gvec = [grads[name] if name in free else 0.0 for name in ("kappa1", "kappa2", "p")]
        if "tau" in free:
            h = fd_step * max(1.0, tau)
            fp, _ = evaluate(k1, k2, p, tau + h)
            fm, _ = evaluate(k1, k2, p, max(tau - h, 1e-9))
            gvec.append((fp - fm) / (2.0 * h) if fp is not None and fm is not None else 0.0)
        else:
            gvec.append(0.0)
        gvec = np.array(gvec)
        gnorm = float(np.linalg.norm(gvec))
        if gnorm == 0.0:
            break
        if step is None:
            step = 0.25 * max(abs(k1), abs(k2), p, tau, 1.0) / gnorm

        accepted = False
        t_try = step
        for _ in range(40):
            k1_n, k2_n, p_n = _project_params(
                k1 - t_try * gvec[0], k2 - t_try * gvec[1], p - t_try * gvec[2]
            )
            tau_n = max(tau - t_try * gvec[3], 1e-9) if "tau" in free else tau
            f_n, rho_n = evaluate(k1_n, k2_n, p_n, tau_n)
            if f_n is not None and f_n < f:
                improved = f - f_n
                k1, k2, p, tau = k1_n, k2_n, p_n, tau_n
                f, rho = f_n, rho_n
                records.append(OptRecord(it, f, rho, k1, k2, p))
                step = 2.0 * t_try
                accepted = True
                if improved <= 1e-12 * max(f, 1e-30):
                    return ProtocolParams(k1, k2, p, tau), records
                break
            t_try *= 0.5
        if not accepted:
            break
    return ProtocolParams(k1, k2, p, tau), records
