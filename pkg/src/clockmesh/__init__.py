"""Simulator and analysis toolkit for skew-compensating clock
synchronization over arbitrary directed measurement topologies."""

from .analysis import (
    JordanData,
    SyncVerdict,
    UnstableSystemError,
    characteristic_factors,
    check_parameter_conditions,
    hermite_biehler_stable,
    jordan_vectors,
    predict_fixed_point,
    spectral_radius,
    stability_oracle,
    tau_bound_topology_free,
)
from .dynamics import (
    ProtocolParams,
    SystemMatrices,
    SystemState,
    build_matrices,
    decompose,
    measured_offsets,
    step_matrix,
    step_naive,
    step_protocol,
)
from .noise import (
    H2Result,
    Jitter,
    NoiseSpec,
    OptRecord,
    drift_rate,
    h2_gradient,
    h2_norm,
    h2_norm_pair,
    lyapunov_sum,
    optimize_params,
    steady_state_offsets,
)
from .sim import (
    Event,
    Scenario,
    SimTrace,
    metrics,
    quadratic_drift_fit,
    relative_frequency_error,
    run,
    wheel_topology,
)
from .topology import (
    GraphQuantities,
    NotConnectedError,
    TopologySpec,
    build_graph_quantities,
    find_leader,
    mu_max_exact,
    mu_max_gershgorin,
)

__version__ = "0.1.0"
