import numpy as np
import pytest

import clockmesh as cm
from clockmesh.presets import two_node

from helpers import stable_instance


def _match_multisets(a, b, tol):
    """Greedy nearest-neighbor matching of two complex multisets."""
    b = list(b)
    worst = 0.0
    for v in a:
        dists = [abs(v - w) for w in b]
        k = int(np.argmin(dists))
        worst = max(worst, dists[k])
        b.pop(k)
    return worst < tol


def test_single_node_matrix():
    topo = cm.TopologySpec(n=1, edges=[], r=[1.0])
    gq = cm.build_graph_quantities(topo)
    params = cm.ProtocolParams(1.1, 1.0, 0.99, 0.5)
    M = cm.build_matrices(topo, params, gq)
    expected = np.array([[1.0, 0.5, 0.0], [0.0, 1.0, -1.0], [0.0, 0.0, 0.01]])
    assert np.allclose(M.A, expected, atol=1e-15)


def test_two_node_blocks():
    topo = two_node(0.7)
    gq = cm.build_graph_quantities(topo)
    params = cm.ProtocolParams(1.1, 1.0, 0.99, 1.0)
    M = cm.build_matrices(topo, params, gq)
    # rate-from-offset block is -kappa1 * L
    assert np.allclose(M.A[2:4, 0:2], -1.1 * np.array([[0.0, 0.0], [-0.7, 0.7]]))
    # offset-average block is -p * L
    assert np.allclose(M.A[4:6, 0:2], -0.99 * np.array([[0.0, 0.0], [-0.7, 0.7]]))
    # noise input columns: -kappa1 / -p times the weighted incidence
    gain = gq.BG_minus @ np.diag(topo.alpha * topo.gw)
    assert np.allclose(M.B_w[2:4], -1.1 * gain)
    assert np.allclose(M.B_w[4:6], -0.99 * gain)
    assert np.allclose(M.B_w[0:2], 0.0)
    # wander enters the rate rows directly
    assert np.allclose(M.B_d[2:4], np.diag(topo.gd))
    assert np.allclose(M.B_d[0:2], 0.0)
    assert np.allclose(M.B_d[4:6], 0.0)
    # performance map: client offset against the leader
    assert M.ref == 0
    assert np.allclose(M.C, [[-1.0, 1.0, 0.0, 0.0, 0.0, 0.0]])


def test_step_matrix_zero_and_synchronized():
    rng = np.random.default_rng(3)
    topo, params, gq, M = stable_instance(rng)
    n = topo.n
    z = cm.SystemState(np.zeros(n), np.zeros(n), np.zeros(n))
    z1 = cm.step_matrix(z, M)
    assert np.all(z1.x == 0) and np.all(z1.s == 0) and np.all(z1.y == 0)
    assert z1.k == 1
    # synchronized family: x = c*1, s = sigma/r, y = 0 advances linearly
    sigma, c = 0.3, 2.0
    z = cm.SystemState(c * np.ones(n), sigma / topo.r, np.zeros(n))
    z1 = cm.step_matrix(z, M)
    assert np.allclose(z1.x, c + params.tau * sigma, atol=1e-12)
    assert np.allclose(z1.s, z.s, atol=1e-12)
    assert np.allclose(z1.y, 0.0, atol=1e-12)


def test_per_node_step_hand_values():
    # two nodes, client measures -1 ms, single protocol step by hand
    topo = two_node(0.7)
    params = cm.ProtocolParams(1.1, 1.0, 0.99, 1.0)
    z = cm.SystemState(np.array([0.0, 1e-3]), np.array([1.0, 1.0]), np.zeros(2))
    D = {(1, 0): -1e-3}
    z1 = cm.step_protocol(z, topo, params, D)
    assert z1.s[1] == pytest.approx(1.0 - 1.1 * 0.7 * 1e-3)  # 0.99923
    assert z1.y[1] == pytest.approx(-0.99 * 0.7 * 1e-3)  # -6.93e-4
    assert z1.x[1] == pytest.approx(1e-3 + 1.0)
    assert z1.s[0] == 1.0 and z1.y[0] == 0.0


def test_zero_offsets_keep_rates():
    topo = two_node(0.7)
    params = cm.ProtocolParams(1.1, 1.0, 0.99, 1.0)
    z = cm.SystemState(np.array([0.0, 0.5]), np.array([1.0, 1.2]), np.zeros(2))
    z1 = cm.step_protocol(z, topo, params, {(1, 0): 0.0})
    assert np.allclose(z1.s, z.s)
    assert np.allclose(z1.x, z.x + params.tau * topo.r * z.s)


def test_missing_offset_errors():
    topo = two_node(0.7)
    params = cm.ProtocolParams(1.1, 1.0, 0.99, 1.0)
    z = cm.SystemState.initial(2)
    with pytest.raises(ValueError, match="missing offset"):
        cm.step_protocol(z, topo, params, {})


def test_per_node_step_equals_matrix_step():
    rng = np.random.default_rng(11)
    for _ in range(100):
        topo, params, gq, M = stable_instance(rng)
        z = cm.SystemState(
            rng.normal(scale=1e-3, size=topo.n),
            1.0 + rng.normal(scale=1e-4, size=topo.n),
            rng.normal(scale=1e-4, size=topo.n),
        )
        za = cm.step_protocol(z, topo, params, cm.measured_offsets(topo, z.x))
        zb = cm.step_matrix(z, M)
        scale = max(1.0, np.max(np.abs(zb.stacked())))
        assert np.max(np.abs(za.stacked() - zb.stacked())) < 1e-12 * scale


def test_decompose_reconstruction_and_special_cases():
    rng = np.random.default_rng(5)
    topo, params, gq, M = stable_instance(rng)
    n = topo.n
    # synchronized state decomposes onto the collective alone
    sigma, c = 0.7, 1.5
    z = cm.SystemState(c * np.ones(n), sigma / topo.r, np.zeros(n))
    zt, dz = cm.decompose(z, gq)
    assert zt == pytest.approx([c, sigma, 0.0], abs=1e-12)
    assert np.max(np.abs(dz)) < 1e-12
    # generic state reconstructs exactly
    z = cm.SystemState(
        rng.normal(size=n), rng.normal(size=n), rng.normal(size=n)
    )
    zt, dz = cm.decompose(z, gq)
    rinv = 1.0 / topo.r
    rebuilt = np.concatenate(
        [zt[0] + dz[:n], zt[1] * rinv + dz[n : 2 * n], zt[2] * rinv + dz[2 * n :]]
    )
    assert np.allclose(rebuilt, z.stacked(), atol=1e-12)


def test_leader_collective_time_is_leader_time():
    rng = np.random.default_rng(6)
    topo, params, gq, M = stable_instance(rng, require_leader=True)
    # with r_leader = 1 the collective time equals the leader's estimate
    topo.r[gq.leader] = 1.0
    gq = cm.build_graph_quantities(topo)
    z = cm.SystemState(
        rng.normal(size=topo.n), rng.normal(size=topo.n), rng.normal(size=topo.n)
    )
    zt, _ = cm.decompose(z, gq)
    assert zt[0] == pytest.approx(z.x[gq.leader], abs=1e-12)


def test_deviation_recursion_and_collective_recursion():
    rng = np.random.default_rng(9)
    for _ in range(10):
        topo, params, gq, M = stable_instance(rng)
        z = cm.SystemState(
            rng.normal(scale=1e-3, size=topo.n),
            1.0 + rng.normal(scale=1e-4, size=topo.n),
            rng.normal(scale=1e-4, size=topo.n),
        )
        for _ in range(5):
            zt, dz = cm.decompose(z, gq)
            z_next = cm.step_matrix(z, M)
            zt_next, dz_next = cm.decompose(z_next, gq)
            assert np.max(np.abs(dz_next - M.A_hat @ dz)) < 1e-12
            assert np.max(np.abs(zt_next - M.A_tilde @ zt)) < 1e-12
            z = z_next


def test_projector_and_eigenstructure():
    rng = np.random.default_rng(13)
    for _ in range(10):
        topo, params, gq, M = stable_instance(rng)
        assert np.max(np.abs(M.N @ M.N - M.N)) < 1e-10
        assert np.max(np.abs(M.N @ M.A @ M.N - M.A_hat)) < 1e-10
        eig_hat = np.linalg.eigvals(M.A_hat)
        order = np.argsort(np.abs(eig_hat))
        assert np.max(np.abs(eig_hat[order][:3])) < 1e-8
        # spectrum splits into the collective 3x3 plus the deviation modes
        eig_a = np.linalg.eigvals(M.A)
        eig_tilde = np.linalg.eigvals(M.A_tilde)
        combined = np.concatenate([eig_tilde, eig_hat[order][3:]])
        assert _match_multisets(eig_a, combined, 1e-8)


def test_naive_rule_unstable_and_oscillating():
    topo = two_node(0.7)
    # client (x, s) subsystem has spectral radius > 1 for every tau
    for tau in (0.05, 0.2, 1.0, 3.0):
        sub = np.array([[1.0, tau], [-1.1 * 0.7, 1.0]])
        assert np.max(np.abs(np.linalg.eigvals(sub))) > 1.0
    params = cm.ProtocolParams(1.1, 1.0, 0.99, 1.0)
    # zero offsets leave the rate untouched
    z = cm.SystemState.initial(2)
    z1 = cm.step_naive(z, topo, params, {(1, 0): 0.0})
    assert np.allclose(z1.s, z.s)
    # oscillation energy grows strictly every step
    z = cm.SystemState.initial(2, x=[0.0, 1e-3])
    energy_prev = None
    for _ in range(100):
        z = cm.step_naive(z, topo, params, cm.measured_offsets(topo, z.x))
        dx, ds = z.x[1] - z.x[0], z.s[1] - z.s[0]
        energy = 1.1 * 0.7 * dx * dx + ds * ds
        if energy_prev is not None:
            assert energy > energy_prev
        energy_prev = energy
