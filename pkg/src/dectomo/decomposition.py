"""Sinogram-domain material decomposition via a bivariate polynomial map.

The decomposer approximates the inverse of the poly-energetic log-measurement
map: it takes per-ray dual-energy measurements ``y = (y_e1, y_e2)`` and
returns material line integrals ``p = (p_1, p_2)``. Both output channels use
the full monomial basis ``y_e1^i * y_e2^j`` for ``i <= degree_i``,
``j <= degree_j``; the coefficients are fit by weighted linear least squares
on calibration rays. Inputs are affinely rescaled to [-1, 1]^2 before
monomial expansion so the degree-3 Vandermonde system stays well
conditioned.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .errors import ConditioningError
from .validation import check_ray_pairs

NORMAL_EQ_DAMPING = 1e-10
MAX_CONDITION = 1e14
JACOBIAN_DET_TOL = 1e-12
B_DIAG_FLOOR_FRACTION = 1e-8


def design_row(y_n, degree_i, degree_j):
    """Monomial vector ``[y1^i * y2^j]`` in i-major order for one ray."""
    y1, y2 = float(y_n[0]), float(y_n[1])
    pow1 = y1 ** np.arange(degree_i + 1)
    pow2 = y2 ** np.arange(degree_j + 1)
    return np.outer(pow1, pow2).ravel()


def design_matrix(y, degree_i, degree_j):
    """Stacked design rows for an (n_rays, 2) measurement array."""
    y = np.asarray(y, dtype=np.float64)
    pow1 = y[:, 0:1] ** np.arange(degree_i + 1)[None, :]
    pow2 = y[:, 1:2] ** np.arange(degree_j + 1)[None, :]
    return (pow1[:, :, None] * pow2[:, None, :]).reshape(y.shape[0], -1)


@dataclass
class DecompCovariance:
    """Covariance weights transported from the measurement domain.

    ``b_diag`` holds the per-ray diagonal used by the data-consistency
    operator; ``b_full`` keeps the full 2x2 matrices for diagnostics.
    ``n_flagged`` counts rays whose Jacobian was numerically singular (their
    ``b_diag`` is set to the floor value).
    """

    b_diag: np.ndarray
    b_full: np.ndarray
    n_flagged: int = 0


class PolynomialDecomposer(TransformerMixin, BaseEstimator):
    """Learned polynomial map from dual-energy to material sinograms.

    Parameters
    ----------
    degree_i, degree_j : int
        Maximal exponents of the two measurement channels (default 3, 3).
    damping : float
        Tikhonov damping applied to the normal equations, relative to the
        mean diagonal magnitude.

    Attributes (after fit)
    ----------------------
    theta_ : ndarray, shape ((degree_i+1)*(degree_j+1), 2)
        Coefficients in rescaled coordinates, i-major order, one column per
        material channel.
    scale_offset_, scale_slope_ : ndarray, shape (2,)
        Affine map ``u = (y - offset) * slope`` onto [-1, 1].
    condition_number_ : float
        Condition number of the (undamped) normal matrix.
    residuals_ : ndarray, shape (n_rays,)
        Per-ray Euclidean fit residuals on the calibration set.
    """

    def __init__(self, degree_i=3, degree_j=3, damping=NORMAL_EQ_DAMPING):
        self.degree_i = degree_i
        self.degree_j = degree_j
        self.damping = damping

    def _check_fitted(self):
        if not hasattr(self, "theta_"):
            raise NotFittedError("PolynomialDecomposer must be fitted before use")

    @property
    def n_terms(self):
        return (self.degree_i + 1) * (self.degree_j + 1)

    def _rescale(self, y):
        return (y - self.scale_offset_[None, :]) * self.scale_slope_[None, :]

    def fit(self, X, y, sample_weight=None):
        """Fit coefficients on calibration rays.

        Parameters
        ----------
        X : ndarray, shape (n_rays, 2)
            Dual-energy measurements.
        y : ndarray, shape (n_rays, 2)
            Known material line integrals for the same rays.
        sample_weight : ndarray, shape (n_rays,) or (n_rays, 2), optional
            Statistical weights; a two-column array (per-source weights) is
            reduced to its per-ray mean.
        """
        X = check_ray_pairs(X, "X")
        y = check_ray_pairs(y, "y")
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y must have the same number of rays")
        if X.shape[0] < self.n_terms:
            raise ValueError(
                f"need at least {self.n_terms} calibration rays, got {X.shape[0]}"
            )
        if sample_weight is None:
            w = np.ones(X.shape[0])
        else:
            w = np.asarray(sample_weight, dtype=np.float64)
            if w.ndim == 2:
                w = w.mean(axis=1)

        lo, hi = X.min(axis=0), X.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        self.scale_offset_ = (hi + lo) / 2.0
        self.scale_slope_ = 2.0 / span

        design = design_matrix(self._rescale(X), self.degree_i, self.degree_j)
        gram = design.T @ (design * w[:, None])
        rhs = design.T @ (y * w[:, None])
        eigvals = scipy.linalg.eigvalsh(gram)
        self.condition_number_ = float(
            np.inf if eigvals[0] <= 0 else eigvals[-1] / eigvals[0]
        )
        if self.condition_number_ > MAX_CONDITION:
            raise ConditioningError(self.condition_number_)
        gram_d = gram + self.damping * np.eye(gram.shape[0])
        self.theta_ = scipy.linalg.solve(gram_d, rhs, assume_a="pos")
        self.residuals_ = np.linalg.norm(design @ self.theta_ - y, axis=1)
        return self

    def transform(self, X):
        """Decompose measurements into material line integrals, (n_rays, 2)."""
        self._check_fitted()
        X = check_ray_pairs(X, "X")
        design = design_matrix(self._rescale(X), self.degree_i, self.degree_j)
        return design @ self.theta_

    def jacobian(self, X):
        """Analytic per-ray Jacobians d p_hat / d y, shape (n_rays, 2, 2)."""
        self._check_fitted()
        X = check_ray_pairs(X, "X")
        u = self._rescale(X)
        e_i = np.arange(self.degree_i + 1)
        e_j = np.arange(self.degree_j + 1)
        pow1 = u[:, 0:1] ** e_i[None, :]
        pow2 = u[:, 1:2] ** e_j[None, :]
        # d(u^k)/du = k * u^(k-1), with the k=0 column identically zero
        dpow1 = np.zeros_like(pow1)
        dpow1[:, 1:] = e_i[1:][None, :] * (u[:, 0:1] ** (e_i[1:] - 1)[None, :])
        dpow2 = np.zeros_like(pow2)
        dpow2[:, 1:] = e_j[1:][None, :] * (u[:, 1:2] ** (e_j[1:] - 1)[None, :])
        d_du1 = (dpow1[:, :, None] * pow2[:, None, :]).reshape(X.shape[0], -1)
        d_du2 = (pow1[:, :, None] * dpow2[:, None, :]).reshape(X.shape[0], -1)
        jac = np.empty((X.shape[0], 2, 2))
        jac[:, :, 0] = (d_du1 @ self.theta_) * self.scale_slope_[0]
        jac[:, :, 1] = (d_du2 @ self.theta_) * self.scale_slope_[1]
        return jac

    def covariance_weights(self, X, weights):
        """Transport measurement weights into the material-sinogram domain.

        Per ray, ``B = J^-1 W J^-T`` with ``W = diag(weights)`` and ``J`` the
        decomposer Jacobian. Rays with a numerically singular Jacobian are
        flagged and their diagonal weights set to the floor value
        (``1e-8 * median(b_diag)``); the same floor is applied everywhere.
        """
        self._check_fitted()
        X = check_ray_pairs(X, "X")
        w = check_ray_pairs(weights, "weights")
        if np.any(w <= 0):
            raise ValueError("weights must be strictly positive")
        jac = self.jacobian(X)
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        norm_sq = np.einsum("nij,nij->n", jac, jac)
        singular = np.abs(det) <= JACOBIAN_DET_TOL * norm_sq
        safe_det = np.where(singular, 1.0, det)
        inv = np.empty_like(jac)
        inv[:, 0, 0] = jac[:, 1, 1] / safe_det
        inv[:, 0, 1] = -jac[:, 0, 1] / safe_det
        inv[:, 1, 0] = -jac[:, 1, 0] / safe_det
        inv[:, 1, 1] = jac[:, 0, 0] / safe_det
        b_full = np.einsum("nij,nj,nkj->nik", inv, w, inv)
        b_diag = np.stack([b_full[:, 0, 0], b_full[:, 1, 1]], axis=1)
        b_diag[singular] = np.nan
        if singular.all():
            floor = B_DIAG_FLOOR_FRACTION
        else:
            floor = B_DIAG_FLOOR_FRACTION * float(np.nanmedian(b_diag))
            if not np.isfinite(floor) or floor <= 0:
                floor = B_DIAG_FLOOR_FRACTION
        b_diag = np.where(np.isnan(b_diag), floor, np.maximum(b_diag, floor))
        b_full[singular] = floor * np.eye(2)[None, :, :]
        return DecompCovariance(b_diag, b_full, int(np.count_nonzero(singular)))

    def raw_coefficients(self):
        """Coefficients of the equivalent polynomial in unscaled ``y``.

        Expands ``u = slope * (y - offset)`` back into the raw monomial
        basis, i-major order as in :func:`design_row`.
        """
        self._check_fitted()
        from math import comb

        def axis_transform(degree, slope, offset):
            # row k of T holds the raw-basis coefficients of u^k
            t = np.zeros((degree + 1, degree + 1))
            for k in range(degree + 1):
                for m in range(k + 1):
                    t[k, m] = comb(k, m) * slope**k * (-offset) ** (k - m)
            return t

        t1 = axis_transform(self.degree_i, self.scale_slope_[0], self.scale_offset_[0])
        t2 = axis_transform(self.degree_j, self.scale_slope_[1], self.scale_offset_[1])
        theta = self.theta_.reshape(self.degree_i + 1, self.degree_j + 1, 2)
        raw = np.einsum("ijc,ik,jl->klc", theta, t1, t2)
        return raw.reshape(self.n_terms, 2)


def calibration_grid(p1_max, p2_max, n_per_axis):
    """Rectangular grid of material path lengths, shape (n^2, 2)."""
    p1 = np.linspace(0.0, p1_max, n_per_axis)
    p2 = np.linspace(0.0, p2_max, n_per_axis)
    g1, g2 = np.meshgrid(p1, p2, indexing="ij")
    return np.stack([g1.ravel(), g2.ravel()], axis=1)


def make_calibration_set(spectrum, basis, p1_max, p2_max, n_per_axis=24):
    """Noiseless calibration pairs from the exact forward model.

    Returns ``(y, p, weights)`` arrays of shape (n^2, 2): measurements,
    material line integrals, and count weights for the fit.
    """
    from .spectral import expected_counts

    p = calibration_grid(p1_max, p2_max, n_per_axis)
    counts = expected_counts(p, spectrum, basis)
    y = -np.log(counts / spectrum.i0)
    return y, p, counts
