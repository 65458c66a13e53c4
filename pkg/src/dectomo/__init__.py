"""Dual-energy CT material decomposition toolkit.

Simulates poly-energetic spectral measurements, learns a polynomial
sinogram-domain decomposition, and reconstructs two-material density images
with an unrolled, CG-based model-based loop trained end to end.
"""

from .containers import EnergySinogram, MaterialImage, MaterialSinogram
from .decomposition import (
    DecompCovariance,
    PolynomialDecomposer,
    calibration_grid,
    design_matrix,
    design_row,
    make_calibration_set,
)
from .denoiser import DenoiserParams, denoise, init_denoiser, zero_denoiser
from .errors import (
    ConditioningError,
    ConfigError,
    DectomoError,
    DependencyError,
    DimensionError,
    DivergenceError,
    InsufficientDataError,
    TableParseError,
    TableRangeError,
)
from .estimators import E2EDecomp, FBPDecomp
from .metrics import material_psnr, psnr
from .phantoms import Ellipse, make_phantom, phantom_family, random_breast_phantom
from .projector import Geometry, back_project, fbp, forward_project, system_matrix
from .recon import (
    DCSystem,
    ReconConfig,
    assemble_dc_system,
    dc_solve,
    default_lambda,
    e2e_decomp,
    fbp_decomp,
    normal_operator,
)
from .spectral import (
    EnergyGrid,
    MaterialBasis,
    Spectrum,
    default_grid,
    expected_counts,
    load_table,
    log_measurement,
    make_builtin_basis,
    make_synthetic_spectrum,
    simulate,
)
from .training import TrainConfig, dc_backward, loss_and_grads, train, unrolled_loss

__version__ = "0.1.0"

__all__ = [
    "ConditioningError",
    "ConfigError",
    "DCSystem",
    "DecompCovariance",
    "DectomoError",
    "DenoiserParams",
    "DependencyError",
    "DimensionError",
    "DivergenceError",
    "E2EDecomp",
    "Ellipse",
    "EnergyGrid",
    "EnergySinogram",
    "FBPDecomp",
    "Geometry",
    "InsufficientDataError",
    "MaterialBasis",
    "MaterialImage",
    "MaterialSinogram",
    "PolynomialDecomposer",
    "ReconConfig",
    "Spectrum",
    "TableParseError",
    "TableRangeError",
    "TrainConfig",
    "assemble_dc_system",
    "back_project",
    "calibration_grid",
    "dc_backward",
    "dc_solve",
    "default_grid",
    "default_lambda",
    "denoise",
    "design_matrix",
    "design_row",
    "e2e_decomp",
    "expected_counts",
    "fbp",
    "fbp_decomp",
    "forward_project",
    "init_denoiser",
    "load_table",
    "log_measurement",
    "loss_and_grads",
    "make_builtin_basis",
    "make_calibration_set",
    "make_phantom",
    "make_synthetic_spectrum",
    "material_psnr",
    "normal_operator",
    "phantom_family",
    "psnr",
    "random_breast_phantom",
    "simulate",
    "system_matrix",
    "train",
    "unrolled_loss",
    "zero_denoiser",
]
