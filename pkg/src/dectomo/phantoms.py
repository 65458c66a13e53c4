"""Ellipse-composition phantoms with two material-density channels.

A phantom spec is a list of ellipses drawn in order; later ellipses overwrite
earlier ones (both channels) inside their support. Coordinates are physical
(cm) with the origin at the image center.
"""

from dataclasses import dataclass

import numpy as np

from .containers import MaterialImage

# Rough soft-tissue densities, mg/cm^3.
ADIPOSE_DENSITY = 950.0
FIBROGLANDULAR_DENSITY = 1035.0


@dataclass(frozen=True)
class Ellipse:
    """One phantom ellipse: center/axes in cm, rotation in radians,
    density pair in mg/cm^3."""

    center_x: float
    center_y: float
    axis_a: float
    axis_b: float
    rotation: float
    density_1: float
    density_2: float

    def __post_init__(self):
        if self.axis_a <= 0 or self.axis_b <= 0:
            raise ValueError("ellipse axes must be positive")
        if self.density_1 < 0 or self.density_2 < 0:
            raise ValueError("ellipse densities must be nonnegative")


def make_phantom(ellipses, width, height, pixel_size):
    """Rasterize an ellipse list into a :class:`MaterialImage`.

    A pixel belongs to an ellipse when its center lies inside; background is
    zero in both channels.
    """
    densities = np.zeros((2, height, width))
    xs = (np.arange(width) - (width - 1) / 2.0) * pixel_size
    ys = (np.arange(height) - (height - 1) / 2.0) * pixel_size
    gx, gy = np.meshgrid(xs, ys)
    for e in ellipses:
        dx, dy = gx - e.center_x, gy - e.center_y
        c, s = np.cos(e.rotation), np.sin(e.rotation)
        u = (c * dx + s * dy) / e.axis_a
        v = (-s * dx + c * dy) / e.axis_b
        inside = u * u + v * v <= 1.0
        densities[0][inside] = e.density_1
        densities[1][inside] = e.density_2
    return MaterialImage(densities, pixel_size)


def random_breast_phantom(rng, width, height, pixel_size):
    """Draw a random two-tissue phantom: an adipose-like outer ellipse with
    a few fibroglandular-like inclusions, all inside the field of view."""
    fov = min(width, height) * pixel_size
    outer_a = fov * rng.uniform(0.30, 0.42)
    outer_b = fov * rng.uniform(0.30, 0.42)
    ellipses = [
        Ellipse(
            center_x=fov * rng.uniform(-0.03, 0.03),
            center_y=fov * rng.uniform(-0.03, 0.03),
            axis_a=outer_a,
            axis_b=outer_b,
            rotation=rng.uniform(0.0, np.pi),
            density_1=ADIPOSE_DENSITY,
            density_2=0.0,
        )
    ]
    for _ in range(rng.integers(2, 6)):
        r = min(outer_a, outer_b)
        ellipses.append(
            Ellipse(
                center_x=rng.uniform(-0.5, 0.5) * r,
                center_y=rng.uniform(-0.5, 0.5) * r,
                axis_a=r * rng.uniform(0.12, 0.35),
                axis_b=r * rng.uniform(0.12, 0.35),
                rotation=rng.uniform(0.0, np.pi),
                density_1=0.0,
                density_2=FIBROGLANDULAR_DENSITY,
            )
        )
    return make_phantom(ellipses, width, height, pixel_size)


def phantom_family(seed, count, width, height, pixel_size):
    """Deterministic list of random phantoms (one Philox stream per set)."""
    rng = np.random.Generator(np.random.Philox(seed))
    return [random_breast_phantom(rng, width, height, pixel_size) for _ in range(count)]
