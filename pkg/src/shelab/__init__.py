"""Numerical laboratory for the stochastic heat equation with multiplicative noise.

The package is organized around the rescaled lattice systems that approximate
the equation: jump measures and their generators (:mod:`shelab.walks`),
transition kernels on the lattice and their stable-density limits
(:mod:`shelab.kernels`), a coupled driving-noise construction
(:mod:`shelab.noise`), time steppers for the lattice field
(:mod:`shelab.simulator`), and Monte Carlo experiments that measure
convergence rates, moment growth and temporal regularity
(:mod:`shelab.experiments`).
"""

from shelab.walks import (
    DislocationMeasure,
    WalkModel,
    AssumptionReport,
    make_simple_walk,
    make_stable_tail_walk,
    char_fn,
    verify_assumption,
    generator_apply,
)
from shelab.kernels import (
    StableKernel,
    DiscreteKernelTable,
    LcltErrorReport,
    stable_density,
    stable_density_grid,
    discrete_transition,
    l2_kernel_identity,
    lclt_sup_error,
    kernel_l2_difference,
    green_function_bound,
)
from shelab.noise import (
    SheetGrid,
    NoiseIncrement,
    sample_increments,
    coarsen,
    coupled_streams,
)
from shelab.simulator import (
    SigmaSpec,
    SheConfig,
    FieldState,
    TrajectoryBlowup,
    step_euler,
    step_splitstep,
    simulate,
    simulate_coupled,
)
from shelab.experiments import (
    MomentReport,
    RateReport,
    LyapunovReport,
    estimate_moment,
    pam_second_moment_oracle,
    compare_moments,
    convergence_rate,
    temporal_increment_scaling,
    lyapunov_estimate,
)

__version__ = "0.1.0"

__all__ = [
    "DislocationMeasure",
    "WalkModel",
    "AssumptionReport",
    "make_simple_walk",
    "make_stable_tail_walk",
    "char_fn",
    "verify_assumption",
    "generator_apply",
    "StableKernel",
    "DiscreteKernelTable",
    "LcltErrorReport",
    "stable_density",
    "stable_density_grid",
    "discrete_transition",
    "l2_kernel_identity",
    "lclt_sup_error",
    "kernel_l2_difference",
    "green_function_bound",
    "SheetGrid",
    "NoiseIncrement",
    "sample_increments",
    "coarsen",
    "coupled_streams",
    "SigmaSpec",
    "SheConfig",
    "FieldState",
    "TrajectoryBlowup",
    "step_euler",
    "step_splitstep",
    "simulate",
    "simulate_coupled",
    "MomentReport",
    "RateReport",
    "LyapunovReport",
    "estimate_moment",
    "pam_second_moment_oracle",
    "compare_moments",
    "convergence_rate",
    "temporal_increment_scaling",
    "lyapunov_estimate",
]
