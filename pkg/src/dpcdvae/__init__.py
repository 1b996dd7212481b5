"""dpcdvae: periodic diffusion + VAE generative modeling of crystal
structures, with a structure-matching evaluation suite."""

from .config import RunConfig
from .diffusion import (
    DiffusionState,
    forward_perturb,
    perturb_types,
    reverse_step_periodic,
    reverse_step_standard,
    sample_trajectory,
)
from .estimator import DPCDVAE, check_structures
from .lattice import (
    CrystalStructure,
    Lattice,
    PeriodicGraph,
    build_periodic_graph,
    lattice_from_params,
    min_image_distance,
    niggli_reduce,
    params_from_matrix,
    wrap_pi,
)
from .metrics import (
    CoverageThresholds,
    MatchCriteria,
    MetricsReport,
    coverage,
    density,
    ground_state_compare,
    match_rate_and_rms,
    n_elements,
    structure_match,
    validity,
    wasserstein_1d,
)
from .schedule import NoiseSchedule, make_sigmoid_schedule

__version__ = "0.1.0"

__all__ = [
    "CoverageThresholds",
    "CrystalStructure",
    "DPCDVAE",
    "DiffusionState",
    "Lattice",
    "MatchCriteria",
    "MetricsReport",
    "NoiseSchedule",
    "PeriodicGraph",
    "RunConfig",
    "build_periodic_graph",
    "check_structures",
    "coverage",
    "density",
    "forward_perturb",
    "ground_state_compare",
    "lattice_from_params",
    "make_sigmoid_schedule",
    "match_rate_and_rms",
    "min_image_distance",
    "n_elements",
    "niggli_reduce",
    "params_from_matrix",
    "perturb_types",
    "reverse_step_periodic",
    "reverse_step_standard",
    "sample_trajectory",
    "structure_match",
    "validity",
    "wasserstein_1d",
    "wrap_pi",
]
