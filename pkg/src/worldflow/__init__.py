"""Spectral wave-field propagation with trajectory bundles, substantial
measures over configuration space, and pointer-based measurement analysis."""

from .configspace import (
    Grid,
    PhysicsParams,
    Potential,
    WaveField,
    inner_product,
    make_grid,
    make_state,
    norm,
    normalize,
    riemann_sum,
)
from .hydrodynamics import (
    FlowFrame,
    continuity_residual,
    current,
    density,
    flow_frame,
    node_mask,
    polar_fields,
    quantum_potential,
    velocity,
)
from .measure import (
    Region,
    Surface,
    full_region,
    induced_density,
    pushforward_measure,
    substantial_amount,
    substantial_flow,
    world_probability,
)
from .measurement import (
    BranchReport,
    CollapseReport,
    MeasurementSetup,
    born_probability,
    branch_decompose,
    impulsive_measure,
    outcome_probability_via_worlds,
    subjective_collapse_compare,
)
from .miw import (
    WorldEnsemble,
    empirical_density,
    miw_outcome_frequencies,
    newtonian_trajectories,
    quantization_check,
    sample_worlds,
    silverman_bandwidth,
)
from .propagator import FrameStore, apply_hamiltonian, evolve, expected_energy
from .scenarios import (
    RunResult,
    ScenarioConfig,
    ScenarioError,
    build_config,
    bundled_scenario_path,
    continuity_convergence_study,
    list_bundled_scenarios,
    load_scenario,
    refined_config,
    run_scenario,
    validate_scenario,
)
from .worlds import (
    CrossingReport,
    Trajectory,
    TrajectoryBundle,
    check_no_crossing,
    integrate_bundle,
    integrate_trajectory,
    l1_distance,
    pushforward_density,
    seed_linspace,
    seed_support_lattice,
    trajectory_function,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # configuration space and states
    "Grid",
    "PhysicsParams",
    "Potential",
    "WaveField",
    "make_grid",
    "make_state",
    "inner_product",
    "norm",
    "normalize",
    "riemann_sum",
    # propagation
    "FrameStore",
    "evolve",
    "apply_hamiltonian",
    "expected_energy",
    # hydrodynamic fields
    "FlowFrame",
    "density",
    "current",
    "velocity",
    "node_mask",
    "flow_frame",
    "polar_fields",
    "quantum_potential",
    "continuity_residual",
    # world bundles
    "Trajectory",
    "TrajectoryBundle",
    "CrossingReport",
    "integrate_bundle",
    "integrate_trajectory",
    "trajectory_function",
    "check_no_crossing",
    "seed_linspace",
    "seed_support_lattice",
    "pushforward_density",
    "l1_distance",
    # substantial measures
    "Region",
    "Surface",
    "full_region",
    "substantial_amount",
    "world_probability",
    "substantial_flow",
    "pushforward_measure",
    "induced_density",
    # measurement
    "MeasurementSetup",
    "BranchReport",
    "CollapseReport",
    "impulsive_measure",
    "branch_decompose",
    "born_probability",
    "outcome_probability_via_worlds",
    "subjective_collapse_compare",
    # finite ensembles
    "WorldEnsemble",
    "sample_worlds",
    "newtonian_trajectories",
    "empirical_density",
    "miw_outcome_frequencies",
    "silverman_bandwidth",
    "quantization_check",
    # scenarios
    "ScenarioConfig",
    "ScenarioError",
    "RunResult",
    "load_scenario",
    "build_config",
    "validate_scenario",
    "run_scenario",
    "list_bundled_scenarios",
    "bundled_scenario_path",
    "refined_config",
    "continuity_convergence_study",
]
