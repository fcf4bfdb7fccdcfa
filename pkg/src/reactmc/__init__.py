"""Autofocus rigid-motion estimation by accelerated coordinate descent."""

from .rigid import (
    MotionTrajectory,
    RigidVector,
    correct_segment,
    oplus,
    rotvec_to_matrix,
    scale,
)
from .acquisition import (
    Acquisition,
    CoilSet,
    ImageVolume,
    KSpaceSegment,
    add_noise_to_snr,
    corrupt_with_motion,
    draw_motion,
    make_coil_maps,
    make_epi_trajectory,
    make_phantom,
    make_spiral_trajectory,
    sample_kspace,
)
from .recon import (
    ReconCache,
    ReconConfig,
    cache_build,
    cache_eval,
    density_weights,
    grid_acquisition,
    reconstruct_sos,
)
from .metrics import gradient_entropy, gradient_magnitude, u_iepa
from .solver import SolveResult, SolverConfig, minimize_bounded, sweep_1d
from .react import (
    ReactConfig,
    RunReport,
    estimate,
    group_beats,
    momentum_beta,
    ramp_alpha,
    run_cd,
    run_react,
    run_react_grouped,
    subproblem_cost,
)
from .estimator import REACT
from .exceptions import DegenerateInputError, ReactError, ValidationError

__version__ = "0.1.0"
