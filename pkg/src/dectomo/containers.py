"""Array containers for two-material images and two-source sinograms.

Conventions used throughout the toolkit:

* material images are channel-major ``(2, height, width)`` float64 arrays of
  equivalent densities in mg/cm^3 (channel 0 = basis material 1);
* sinograms are channel-major ``(2, n_angles, n_detectors)`` float64 arrays;
* the flattened per-ray view orders rays angle-major, matching the raveled
  ``(n_angles, n_detectors)`` layout, and puts the source/material channel
  last, i.e. shape ``(n_rays, 2)``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .validation import as_float_array, check_finite


@dataclass
class MaterialImage:
    """Per-pixel equivalent densities of the two basis materials.

    Attributes
    ----------
    densities : ndarray, shape (2, height, width)
        Nonnegative densities in mg/cm^3.
    pixel_size : float
        Pixel side length in cm.
    """

    densities: np.ndarray
    pixel_size: float

    def __post_init__(self):
        self.densities = as_float_array(self.densities, "densities", ndim=3)
        if self.densities.shape[0] != 2:
            raise DimensionError(
                f"densities must have 2 material channels, got {self.densities.shape}"
            )
        if self.pixel_size <= 0:
            raise ValueError("pixel_size must be positive")
        if np.any(self.densities < 0):
            raise ValueError("material densities must be nonnegative")

    @property
    def height(self):
        return self.densities.shape[1]

    @property
    def width(self):
        return self.densities.shape[2]


@dataclass
class EnergySinogram:
    """Negative-log attenuation measurements for the two sources.

    Attributes
    ----------
    y : ndarray, shape (2, n_angles, n_detectors)
        Negative-log measurements, channel 0 = source e1.
    weights : ndarray, same shape
        Per-ray statistical weights (inverse variance, approximately the
        detected counts). Strictly positive.
    n_clamped : int
        Number of rays whose raw count was clamped to the one-count floor
        before taking the log.
    """

    y: np.ndarray
    weights: np.ndarray
    n_clamped: int = 0

    def __post_init__(self):
        self.y = as_float_array(self.y, "y", ndim=3)
        self.weights = as_float_array(self.weights, "weights", ndim=3)
        if self.y.shape[0] != 2:
            raise DimensionError(f"y must have 2 source channels, got {self.y.shape}")
        if self.weights.shape != self.y.shape:
            raise DimensionError(
                f"weights shape {self.weights.shape} does not match y shape {self.y.shape}"
            )
        check_finite(self.y, "y")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be strictly positive")

    @property
    def n_angles(self):
        return self.y.shape[1]

    @property
    def n_detectors(self):
        return self.y.shape[2]

    def ray_view(self):
        """Return ``(y, weights)`` as (n_rays, 2) arrays, rays angle-major."""
        n = self.n_angles * self.n_detectors
        return (
            self.y.reshape(2, n).T.copy(),
            self.weights.reshape(2, n).T.copy(),
        )


@dataclass
class MaterialSinogram:
    """Material-density line integrals (mg/cm^2) for the two basis materials."""

    p: np.ndarray

    def __post_init__(self):
        self.p = as_float_array(self.p, "p", ndim=3)
        if self.p.shape[0] != 2:
            raise DimensionError(f"p must have 2 material channels, got {self.p.shape}")
        check_finite(self.p, "p")

    @property
    def n_angles(self):
        return self.p.shape[1]

    @property
    def n_detectors(self):
        return self.p.shape[2]

    def ray_view(self):
        """Return p as an (n_rays, 2) array, rays angle-major."""
        n = self.n_angles * self.n_detectors
        return self.p.reshape(2, n).T.copy()


def rays_to_sinogram(rays, n_angles, n_detectors):
    """Inverse of the ray views: (n_rays, 2) -> (2, n_angles, n_detectors)."""
    rays = np.asarray(rays, dtype=np.float64)
    if rays.shape != (n_angles * n_detectors, 2):
        raise DimensionError(
            f"expected {(n_angles * n_detectors, 2)} ray array, got {rays.shape}"
        )
    return rays.T.reshape(2, n_angles, n_detectors).copy()
