"""Synchronization analysis: stability decisions and limit prediction.

Two independent routes decide stability.  The oracle route removes the
structural modes with the deviation projector and checks the spectral
radius of what remains.  The closed-form route factors the characteristic
polynomial into one cubic per Laplacian eigenvalue and, for graphs with a
real Laplacian spectrum, reduces Schur stability of each cubic to explicit
inequalities on (kappa1, kappa2, p, tau) via a disk-to-half-plane map and
the Hermite-Biehler interlacing criterion.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dynamics import ProtocolParams, SystemMatrices, SystemState, build_matrices
from .topology import GraphQuantities, TopologySpec

#: verdicts with |rho - 1| inside this band are reported as marginal
MARGINAL_BAND = 1e-6


class UnstableSystemError(RuntimeError):
    """Raised when an operation requires a synchronizing (stable) system."""


@dataclass
class SyncVerdict:
    """Outcome of the closed-form synchronization test.

    ``tau_max`` is the largest admissible poll interval; it is None when the
    Laplacian spectrum is complex and only the spectral-radius oracle
    applies.  ``marginal`` flags verdicts within MARGINAL_BAND of the
    stability boundary.
    """

    stable: bool
    rho_j2: float
    reasons: list[str]
    nu: np.ndarray
    tau_max: Optional[float]
    marginal: bool = False


@dataclass
class JordanData:
    """Closed-form chain vectors for the structural eigenvalues.

    (zeta1, zeta2) is the right chain at eigenvalue 1, zeta3 the eigenvector
    at 1 - p; eta1..eta3 are the biorthogonal left counterparts.
    """

    zeta1: np.ndarray
    zeta2: np.ndarray
    zeta3: np.ndarray
    eta1: np.ndarray
    eta2: np.ndarray
    eta3: np.ndarray


def spectral_radius(M: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M)))) if M.size else 0.0


def _nu_values(topo: TopologySpec, params: ProtocolParams, gq: GraphQuantities) -> np.ndarray:
    """Eigenvalues of tau * L * R, ordered by decreasing modulus."""
    LR = gq.L * topo.r[np.newaxis, :]
    nu = params.tau * np.linalg.eigvals(LR)
    return nu[np.argsort(-np.abs(nu), kind="stable")]


def cubic_coefficients(nu: complex, params: ProtocolParams) -> np.ndarray:
    """Monic cubic whose roots are the closed-loop modes attached to one
    eigenvalue nu of tau*L*R:

        (lam - 1)^2 (lam - 1 + p) + [(lam - 1) kappa1 + p (kappa1 - kappa2)] nu

    Returned highest power first, as np.roots expects.
    """
    k1, p, dk = params.kappa1, params.p, params.delta_kappa
    return np.array(
        [
            1.0,
            p - 3.0,
            3.0 - 2.0 * p + k1 * nu,
            p - 1.0 - k1 * nu + p * dk * nu,
        ]
    )


def characteristic_factors(
    topo: TopologySpec, params: ProtocolParams, gq: GraphQuantities
) -> list[tuple[complex, np.ndarray]]:
    """One cubic factor per eigenvalue of tau*L*R.

    The product of the factors equals det(lam*I - A); the factor at nu = 0
    is (lam - 1)^2 (lam - 1 + p) and carries the structural modes.
    """
    return [(nu, cubic_coefficients(nu, params)) for nu in _nu_values(topo, params, gq)]


def stability_oracle(M: SystemMatrices) -> tuple[float, bool]:
    """Spectral-radius route: rho of the deviation map plus the scalar
    conditions 0 < p < 2 and kappa1 != kappa2.

    The three structural eigenvalues of the projected map are zero and never
    dominate, so rho(N @ A) is exactly the radius of the deviation modes.
    """
    rho = spectral_radius(M.A_hat)
    p = M.params.p
    stable = (0.0 < p < 2.0) and (M.params.kappa1 != M.params.kappa2) and rho < 1.0
    return rho, stable


def hermite_biehler_stable(nu: float, params: ProtocolParams) -> bool:
    """Schur test for the cubic at a real nu > 0 without computing roots.

    Maps the unit disk to the left half-plane with lam = (s+1)/(s-1) and
    applies the Hermite-Biehler interlacing criterion to the transformed
    cubic: stability holds iff the leading pair condition
    2*kappa1/(dk*p) - 3 > 0 and the squared root ordering
    0 < w0r < w0i hold, where w0r / w0i are the squared nonzero roots of the
    real / imaginary parts on the half-plane boundary.
    """
    if not nu > 0.0:
        raise ValueError("nu must be real and > 0")
    dk, p = params.delta_kappa, params.p
    dkp = dk * p
    if dkp == 0.0:
        raise ValueError("degenerate transform: delta_kappa * p = 0")
    k1 = params.kappa1
    a2 = 2.0 * k1 / dkp - 3.0
    if not a2 > 0.0:
        return False
    w0r = (4.0 * (2.0 - p) / (dkp * nu) + 2.0 * k1 / dkp - 1.0) / a2
    w0i = 4.0 / (dk * nu) + 3.0 - 4.0 * k1 / dkp
    return 0.0 < w0r < w0i


def tau_bound_topology_free(params: ProtocolParams, alpha_max: float, r_hat_max: float) -> float:
    """Largest poll interval that synchronizes every connected graph with a
    real Laplacian spectrum, bounding mu_max by 2 * alpha_max * r_hat_max."""
    scalar_condition_violations(params, raise_on_violation=True)
    k1, k2, p, dk = params.kappa1, params.kappa2, params.p, params.delta_kappa
    denom = 2.0 * alpha_max * r_hat_max * (k1 - dk * p) ** 2
    if denom == 0.0:
        return np.inf
    return p * (k2 - dk * p) / denom


def scalar_condition_violations(params: ProtocolParams, raise_on_violation: bool = False) -> list[str]:
    """Topology-independent conditions: 0 < p < 2 and
    0 < kappa1 - kappa2 < 2*kappa1/(3p)."""
    reasons = []
    p, dk, k1 = params.p, params.delta_kappa, params.kappa1
    if not 0.0 < p < 2.0:
        reasons.append(f"(i) smoothing weight p = {p} outside (0, 2)")
    if not dk > 0.0:
        reasons.append(f"(ii) kappa1 - kappa2 = {dk} must be > 0")
    elif 0.0 < p < 2.0 and not dk < 2.0 * k1 / (3.0 * p):
        reasons.append(f"(ii) kappa1 - kappa2 = {dk} must be < 2*kappa1/(3p) = {2.0 * k1 / (3.0 * p)}")
    if reasons and raise_on_violation:
        raise ValueError("; ".join(reasons))
    return reasons


def check_parameter_conditions(
    topo: TopologySpec, params: ProtocolParams, gq: GraphQuantities
) -> SyncVerdict:
    """Closed-form synchronization verdict from explicit parameter bounds.

    For connected graphs whose Laplacian spectrum is real this evaluates
        (i)   0 < p < 2
        (ii)  0 < kappa1 - kappa2 < 2*kappa1 / (3p)
        (iii) tau < p (kappa2 - p dk) / (mu_max (kappa1 - p dk)^2)
    which together are equivalent to synchronization.  For complex spectra
    the verdict falls back to the spectral-radius oracle and tau_max is
    unavailable.
    """
    nu = _nu_values(topo, params, gq)
    M = build_matrices(topo, params, gq)
    rho, oracle_stable = stability_oracle(M)
    marginal = abs(rho - 1.0) <= MARGINAL_BAND

    if topo.n > 1:
        mu = nu / params.tau
        scale = max(1.0, float(np.max(np.abs(mu))))
        real_spectrum = bool(np.max(np.abs(mu.imag)) < 1e-9 * scale)
    else:
        real_spectrum = True

    reasons = scalar_condition_violations(params)
    if not real_spectrum:
        if not oracle_stable and not reasons:
            reasons.append(f"spectral radius of deviation map = {rho} >= 1")
        return SyncVerdict(
            stable=oracle_stable and not reasons,
            rho_j2=rho,
            reasons=reasons,
            nu=nu,
            tau_max=None,
            marginal=marginal,
        )

    tau_max = None
    if not reasons:
        # (iii) only means anything once (i)-(ii) hold
        k1, k2, p, dk = params.kappa1, params.kappa2, params.p, params.delta_kappa
        mu_max = float(np.max(nu.real)) / params.tau
        if mu_max > 0.0 and (k1 - dk * p) != 0.0:
            tau_max = float(p * (k2 - dk * p) / (mu_max * (k1 - dk * p) ** 2))
        else:
            tau_max = np.inf
        if not params.tau < tau_max:
            reasons.append(f"(iii) tau = {params.tau} >= tau_max = {tau_max}")
    return SyncVerdict(
        stable=not reasons,
        rho_j2=rho,
        reasons=reasons,
        nu=nu,
        tau_max=tau_max,
        marginal=marginal,
    )


def jordan_vectors(
    topo: TopologySpec, params: ProtocolParams, gq: GraphQuantities
) -> JordanData:
    """Closed-form right/left chain vectors for the structural modes.

    Valid whenever the graph is connected, kappa1 != kappa2 and p > 0; the
    vectors satisfy A z1 = z1, A z2 = z1 + z2, A z3 = (1-p) z3 and are
    biorthogonal to their left counterparts.
    """
    if params.kappa1 == params.kappa2:
        raise ValueError("chain structure requires kappa1 != kappa2")
    if not params.p > 0.0:
        raise ValueError("chain structure requires p > 0")
    n = topo.n
    r, xi, gamma = topo.r, gq.xi, gq.gamma
    k2, p, tau = params.kappa2, params.p, params.tau
    ones, zeros = np.ones(n), np.zeros(n)
    rinv = 1.0 / r

    zeta1 = np.concatenate([ones, zeros, zeros])
    zeta2 = np.concatenate([ones, rinv / tau, zeros])
    zeta3 = np.concatenate([-tau * k2 / p**2 * ones, k2 / p * rinv, rinv])
    eta1 = gamma * np.concatenate([xi * rinv, -tau * xi, tau * k2 * (1.0 / p + 1.0 / p**2) * xi])
    eta2 = gamma * np.concatenate([zeros, tau * xi, -tau * k2 / p * xi])
    eta3 = gamma * np.concatenate([zeros, zeros, xi])
    return JordanData(zeta1, zeta2, zeta3, eta1, eta2, eta3)


def predict_fixed_point(
    z0: SystemState, topo: TopologySpec, params: ProtocolParams, gq: GraphQuantities
) -> tuple[float, float]:
    """Predicted synchronization line from the initial state.

    Every node's time estimate converges to x_star + r_star * k * tau with

        x_star = gamma * sum_i xi_i (x_i(0)/r_i + tau*(kappa2/p^2) y_i(0))
        r_star = gamma * sum_i xi_i (s_i(0) - (kappa2/p) y_i(0))

    Raises:
        UnstableSystemError: when the instance does not synchronize.
    """
    M = build_matrices(topo, params, gq)
    rho, stable = stability_oracle(M)
    if not stable:
        raise UnstableSystemError(f"system does not synchronize (rho = {rho})")
    xi, gamma = gq.xi, gq.gamma
    k2, p, tau = params.kappa2, params.p, params.tau
    x_star = gamma * float(np.sum(xi * (z0.x / topo.r + tau * k2 / p**2 * z0.y)))
    r_star = gamma * float(np.sum(xi * (z0.s - k2 / p * z0.y)))
    return x_star, r_star
