"""Random walks in deterministically chaotic environments.

Simulation and desk-scale numerical verification toolbox: piecewise
expanding interval maps with exact dyadic orbit arithmetic, Ulam
discretization of the transfer operator, a lazy infinite lattice of
independently evolving sites, environment-dependent walk kernels, and a
battery of Monte Carlo estimators (drift, Green-Kubo variance, CLT
diagnostics, large deviations, quenched concentration, two-walk
encounter statistics, gambler's-ruin comparisons).
"""

from chaoswalk.maps import (
    ExactPoint,
    PiecewiseExpandingMap,
    branch_of,
    check_expansion,
    eval_map,
    iterate,
    make_map,
    markov4,
    tripling,
)
from chaoswalk.spectral import (
    DensitySampler,
    SpectralReport,
    UlamMatrix,
    build_ulam,
    correlation_decay,
    invariant_density,
    spectral_gap,
)
from chaoswalk.environment import Environment
from chaoswalk.kernel import Kernel, WalkState, make_kernel
from chaoswalk.experiment import Experiment

__all__ = [
    "ExactPoint",
    "PiecewiseExpandingMap",
    "branch_of",
    "check_expansion",
    "eval_map",
    "iterate",
    "make_map",
    "markov4",
    "tripling",
    "DensitySampler",
    "SpectralReport",
    "UlamMatrix",
    "build_ulam",
    "correlation_decay",
    "invariant_density",
    "spectral_gap",
    "Environment",
    "Kernel",
    "WalkState",
    "make_kernel",
    "Experiment",
]

__version__ = "0.1.0"
