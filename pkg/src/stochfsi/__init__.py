"""Stochastic fluid-structure interaction on a fixed reference domain.

Time marching alternates an implicit elastic half-step with a penalized
implicit fluid half-step on stopped ("artificial") domain configurations,
driven by truncated multiplicative Wiener forcing.  The package keeps a
per-step energy ledger whose discrete identities hold to solver precision
and ships a verification harness that replays them from stored
trajectories.
"""

from .config import RunConfig, build_problem, load_config, parse_config_text
from .diagnostics import (
    LEDGER_COLUMNS,
    EnsembleStats,
    ensemble_stats,
    fluid_inequality_slack,
    ledger_step,
    penalty_scaling_report,
    refinement_ratios,
    telescoped_residual,
    time_shift_modulus,
    verify_fluid_budget,
    verify_structure_identity,
)
from .errors import (
    ConfigurationError,
    GeometryDegenerateError,
    SnapshotFormatError,
    StepFailureError,
    StochFsiError,
)
from .fluid import (
    FluidStepInputs,
    FluidWorkspace,
    PicardReport,
    assemble_fluid_system,
    fluid_energy_identity_residual,
    fluid_substep,
    trilinear_b,
)
from .geometry import (
    AleMap,
    GeometryBounds,
    QpField,
    ale_velocity,
    geometry_bounds,
    harmonic_extension,
    harmonic_extension_scalar_bound_check,
    identity_map,
    interface_spectrum,
    jacobian_identity_residual,
    piola_transform,
    transformed_divergence,
    transformed_gradient,
    transformed_sym_gradient,
)
from .interpolants import InterpolantBundle, build_interpolants
from .mesh import ReferenceMesh
from .noise import NoiseCoefficient, WienerProcess, apply_G, default_spectrum
from .scheme import (
    Problem,
    SchemeConfig,
    TrajectoryRecord,
    compute_cutoff,
    detect_stopping_time,
    run_path,
    update_artificial,
)
from .snapshot import read_snapshot, write_snapshot
from .spectral import InterfaceSpectrum
from .structure import (
    ElasticOperator,
    HermiteGrid,
    StructureState,
    assemble_elastic,
    structure_energy,
    structure_substep,
)
from .verify import verify_trajectory

__version__ = "0.1.0"
