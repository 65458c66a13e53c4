"""Data-consistency solve and the unrolled two-material reconstruction loop.

Each outer iteration solves the weighted quadratic

    [A^T (B . A) + lam I] x = A^T (B . P(y)) + lam z

per material channel with conjugate gradient (the diagonal covariance
weights decouple the channels), clamps the result to nonnegative densities,
and feeds it to the denoiser to produce the next prior image z. The back
projector is the exact transpose of the forward projector, so the operator
is symmetric positive definite and CG applies.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .containers import MaterialImage, rays_to_sinogram
from .errors import DimensionError, DivergenceError
from .projector import Geometry, fbp, operator_norm_sq, system_matrix

DEFAULT_LAMBDA_FRACTION = 0.05


@dataclass
class ReconConfig:
    """Knobs of the data-consistency solve and the unrolled loop.

    ``lam`` is the regularization weight; ``None`` selects the default
    ``0.05 * median(b_diag) * ||A||_2^2`` at system-assembly time.
    """

    lam: Optional[float] = None
    k_outer: int = 3
    cg_max_iter: int = 20
    cg_rel_tol: float = 1e-6

    def __post_init__(self):
        if self.lam is not None and self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.k_outer < 1:
            raise ValueError("k_outer must be >= 1")
        if self.cg_max_iter < 1:
            raise ValueError("cg_max_iter must be >= 1")
        if self.cg_rel_tol <= 0:
            raise ValueError("cg_rel_tol must be positive")


@dataclass
class DCSystem:
    """Assembled data-consistency system for one measured sinogram.

    Attributes
    ----------
    matrix : scipy.sparse matrix, shape (n_rays, n_pixels)
    b_diag : ndarray, shape (n_rays, 2)
        Transported covariance weights (diagonal of B per ray).
    rhs_cache : ndarray, shape (n_pixels, 2)
        The constant back-projected decomposed data ``A^T (B . P(y))``.
    height, width : int
    pixel_size : float
    geometry : Geometry, optional
        Present when assembled from a real acquisition; used for cached
        operator-norm estimates.
    """

    matrix: sp.spmatrix
    b_diag: np.ndarray
    rhs_cache: np.ndarray
    height: int
    width: int
    pixel_size: float = 1.0
    geometry: Optional[Geometry] = None
    _norm_sq: Optional[float] = field(default=None, repr=False)

    def __post_init__(self):
        self.b_diag = np.asarray(self.b_diag, dtype=np.float64)
        self.rhs_cache = np.asarray(self.rhs_cache, dtype=np.float64)
        if np.any(self.b_diag <= 0):
            raise ValueError("b_diag must be strictly positive")
        if self.b_diag.shape != (self.matrix.shape[0], 2):
            raise DimensionError(
                f"b_diag shape {self.b_diag.shape} does not match "
                f"({self.matrix.shape[0]}, 2)"
            )
        if self.rhs_cache.shape != (self.matrix.shape[1], 2):
            raise DimensionError(
                f"rhs_cache shape {self.rhs_cache.shape} does not match "
                f"({self.matrix.shape[1]}, 2)"
            )
        if self.height * self.width != self.matrix.shape[1]:
            raise DimensionError("height * width must equal the matrix column count")

    @property
    def norm_a_sq(self):
        """Estimate of ||A||_2^2 (largest eigenvalue of A^T A)."""
        if self._norm_sq is None:
            if self.geometry is not None:
                self._norm_sq = operator_norm_sq(self.geometry)
            else:
                rng = np.random.Generator(np.random.Philox(0))
                v = rng.standard_normal(self.matrix.shape[1])
                nv = np.linalg.norm(v)
                if nv == 0 or self.matrix.nnz == 0:
                    self._norm_sq = 0.0
                    return self._norm_sq
                v /= nv
                lam = 0.0
                for _ in range(50):
                    w = self.matrix.T @ (self.matrix @ v)
                    lam = float(v @ w)
                    nw = np.linalg.norm(w)
                    if nw == 0:
                        break
                    v = w / nw
                self._norm_sq = lam
        return self._norm_sq


def default_lambda(system):
    """Dimensionally sensible regularization weight for ``system``."""
    lam = DEFAULT_LAMBDA_FRACTION * float(np.median(system.b_diag)) * system.norm_a_sq
    return lam if lam > 0 else 1.0


def assemble_dc_system(y, decomposer, geometry):
    """Build the :class:`DCSystem` for a measured :class:`EnergySinogram`.

    Decomposes the measurements with ``decomposer``, transports the
    statistical weights through its Jacobian, and caches the weighted
    back projection of the decomposed data.
    """
    if y.y.shape[1:] != (geometry.n_angles, geometry.n_detectors):
        raise DimensionError(
            f"sinogram shape {y.y.shape[1:]} does not match geometry "
            f"({geometry.n_angles}, {geometry.n_detectors})"
        )
    y_rays, w_rays = y.ray_view()
    p_hat = decomposer.transform(y_rays)
    cov = decomposer.covariance_weights(y_rays, w_rays)
    mat = system_matrix(geometry)
    rhs = mat.T @ (cov.b_diag * p_hat)
    return DCSystem(
        matrix=mat,
        b_diag=cov.b_diag,
        rhs_cache=rhs,
        height=geometry.height,
        width=geometry.width,
        pixel_size=geometry.pixel_size,
        geometry=geometry,
    )


def _flatten_image(x, system, name="x"):
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape != (2, system.height, system.width):
        raise DimensionError(
            f"{name} shape {arr.shape} does not match (2, {system.height}, {system.width})"
        )
    return arr.reshape(2, -1).T  # (n_pixels, 2)


def _unflatten_image(flat, system):
    return flat.T.reshape(2, system.height, system.width)


def _apply_normal(system, lam, flat):
    """H x = A^T (b . (A x)) + lam x on an (n_pixels, 2) array."""
    return system.matrix.T @ (system.b_diag * (system.matrix @ flat)) + lam * flat


def normal_operator(system, lam, x):
    """Apply the SPD data-consistency operator to a two-channel image."""
    return _unflatten_image(_apply_normal(system, lam, _flatten_image(x, system)), system)


@dataclass
class DCReport:
    """Per-channel CG diagnostics for one data-consistency solve."""

    iterations: np.ndarray
    residual_norms: np.ndarray
    relative_residuals: np.ndarray
    residual_history: np.ndarray  # (n_recorded, 2), includes the initial residual
    n_clamped: int = 0


def cg_solve(system, lam, rhs_flat, x0_flat=None, rel_tol=1e-6, max_iter=20):
    """Conjugate gradient on ``(A^T B A + lam I) x = rhs`` for both channels.

    Returns ``(x, report)`` with per-channel iteration counts and residual
    norms; raises :class:`DivergenceError` when non-finite values appear
    (symptomatic of a broken adjoint or negative weights).
    """
    rhs = np.asarray(rhs_flat, dtype=np.float64)
    x = np.zeros_like(rhs) if x0_flat is None else np.array(x0_flat, dtype=np.float64)
    r = rhs - _apply_normal(system, lam, x)
    p = r.copy()
    rs = np.sum(r * r, axis=0)
    rhs_norm = np.sqrt(np.sum(rhs * rhs, axis=0))
    tol = rel_tol * np.where(rhs_norm > 0, rhs_norm, 1.0)
    history = [np.sqrt(rs)]
    iterations = np.zeros(2, dtype=np.int64)
    done = np.sqrt(rs) <= tol
    it = 0
    while it < max_iter and not done.all():
        hp = _apply_normal(system, lam, p)
        denom = np.sum(p * hp, axis=0)
        step_ok = (~done) & (denom > 0) & (rs > 0)
        alpha = np.where(step_ok, rs / np.where(denom > 0, denom, 1.0), 0.0)
        x = x + alpha * p
        r = r - alpha * hp
        rs_new = np.sum(r * r, axis=0)
        if not np.all(np.isfinite(rs_new)):
            raise DivergenceError("non-finite CG residual")
        beta = np.where(step_ok & (rs > 0), rs_new / np.where(rs > 0, rs, 1.0), 0.0)
        p = r + beta * p
        rs = rs_new
        it += 1
        newly_done = (~done) & (np.sqrt(rs) <= tol)
        iterations[~done] = it
        done = done | newly_done
        history.append(np.sqrt(rs))
    report = DCReport(
        iterations=iterations,
        residual_norms=np.sqrt(rs),
        relative_residuals=np.sqrt(rs) / np.where(rhs_norm > 0, rhs_norm, 1.0),
        residual_history=np.asarray(history),
    )
    return x, report


def dc_solve(system, z, lam, config, x0=None):
    """Solve one data-consistency step and project onto nonnegative images.

    Parameters
    ----------
    system : DCSystem
    z : ndarray (2, height, width) or None
        Prior image from the denoiser; ``None`` means zero.
    lam : float or None
        Regularization weight; ``None`` selects :func:`default_lambda`.
    config : ReconConfig
    x0 : ndarray, optional
        Warm-start image for CG.

    Returns
    -------
    (ndarray, DCReport)
        The clamped two-channel image and solver diagnostics.
    """
    lam = default_lambda(system) if lam is None else lam
    rhs = system.rhs_cache.copy()
    if z is not None:
        rhs = rhs + lam * _flatten_image(z, system, "z")
    x0_flat = None if x0 is None else _flatten_image(x0, system, "x0")
    x, report = cg_solve(
        system, lam, rhs, x0_flat, rel_tol=config.cg_rel_tol, max_iter=config.cg_max_iter
    )
    report.n_clamped = int(np.sum(x < 0))
    return _unflatten_image(np.maximum(x, 0.0), system), report


def e2e_decomp(y, decomposer, denoiser, config, geometry):
    """Unrolled reconstruction: alternate DC solves and denoising steps.

    Runs ``config.k_outer`` iterations starting from a zero prior image;
    each CG solve warm-starts from the previous iterate. The output is the
    (clamped) DC solution of the last iteration.

    Parameters
    ----------
    y : EnergySinogram
    decomposer : PolynomialDecomposer (fitted)
    denoiser : object with an ``apply(x)`` method, or None
        ``None`` uses the identity (no prior learning).
    config : ReconConfig
    geometry : Geometry

    Returns
    -------
    (MaterialImage, list of DCReport)
    """
    system = assemble_dc_system(y, decomposer, geometry)
    lam = default_lambda(system) if config.lam is None else config.lam
    z = None
    x = None
    reports = []
    for k in range(config.k_outer):
        x, report = dc_solve(system, z, lam, config, x0=x)
        reports.append(report)
        if k < config.k_outer - 1:
            z = x if denoiser is None else denoiser.apply(x)
    return MaterialImage(x, geometry.pixel_size), reports


def fbp_decomp(y, decomposer, geometry, filter_name="ram-lak"):
    """Decompose-then-FBP baseline, clamped to nonnegative densities."""
    y_rays, _ = y.ray_view()
    p_hat = rays_to_sinogram(
        decomposer.transform(y_rays), geometry.n_angles, geometry.n_detectors
    )
    channels = [fbp(p_hat[c], geometry, filter_name) for c in range(2)]
    return MaterialImage(np.maximum(np.stack(channels), 0.0), geometry.pixel_size)
