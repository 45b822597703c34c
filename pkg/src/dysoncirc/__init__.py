"""Self-consistent spectral densities of correlated non-Hermitian matrices.

The package solves the coupled matrix Dyson equations attached to a
covariance super-operator, evaluates the resulting radially symmetric
spectral density (the Brown measure of matrix-valued circular families),
and validates the predictions against sampled random-matrix ensembles.
"""

__version__ = "0.1.0"

from .covariance import (
    CovarianceOperator,
    PerronData,
    flatness_bounds,
    normalize,
    spectral_radius,
)
from .density import (
    DensityProfile,
    LogPotential,
    brown_measure,
    jump_height,
    laplacian_check,
    log_potential,
    sigma_at,
    sigma_profile,
    solve_edge_cubic,
)
from .dyson import (
    BlockSolution,
    DysonSolution,
    assemble_block,
    identity_suite,
    solve_at,
    solve_bulk,
    solve_outside,
)
from .ensemble import EmpiricalSpectrum, EnsembleSpec, girko_statistic, sample, spectrum
from .stability import MatrixPair, StabilityBundle, build, deflated_solve, f_spectral_radius

__all__ = [
    "CovarianceOperator",
    "PerronData",
    "flatness_bounds",
    "normalize",
    "spectral_radius",
    "DensityProfile",
    "LogPotential",
    "brown_measure",
    "jump_height",
    "laplacian_check",
    "log_potential",
    "sigma_at",
    "sigma_profile",
    "solve_edge_cubic",
    "BlockSolution",
    "DysonSolution",
    "assemble_block",
    "identity_suite",
    "solve_at",
    "solve_bulk",
    "solve_outside",
    "EmpiricalSpectrum",
    "EnsembleSpec",
    "girko_statistic",
    "sample",
    "spectrum",
    "MatrixPair",
    "StabilityBundle",
    "build",
    "deflated_solve",
    "f_spectral_radius",
    "__version__",
]
