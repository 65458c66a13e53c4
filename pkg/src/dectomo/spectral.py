"""Spectral forward model: energy grids, source spectra, attenuation bases,
and the poly-energetic measurement simulator.

The measurement model for ray ``n`` and source ``k`` is

    counts[n, k] = i0 * sum_E S_k(E) * exp(-(p[n,1] phi_1(E) + p[n,2] phi_2(E)))

with the spectrum rows ``S_k`` normalized to unit sum (the energy-bin width is
folded into the normalization), so zero material path implies exactly ``i0``
counts and a zero log measurement. Negative-log measurements are
``y = -log(counts / i0)`` and the statistical weights are the detected counts.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, TableParseError, TableRangeError
from .validation import as_float_array, check_finite

SPECTRUM_SUM_TOL = 1e-12
COUNT_FLOOR = 1.0  # one-count clamp before the log


@dataclass(frozen=True)
class EnergyGrid:
    """Uniform energy sampling grid in keV."""

    e_min: float
    e_max: float
    delta_e: float

    def __post_init__(self):
        if self.delta_e <= 0:
            raise ValueError("delta_e must be positive")
        if self.e_max <= self.e_min:
            raise ValueError("e_max must exceed e_min")
        if self.n_energies < 2:
            raise ValueError("energy grid needs at least 2 samples")

    @property
    def n_energies(self):
        return int(round((self.e_max - self.e_min) / self.delta_e)) + 1

    @property
    def energies(self):
        return self.e_min + self.delta_e * np.arange(self.n_energies)


def default_grid():
    """Diagnostic-range grid, 20-120 keV at 1 keV steps."""
    return EnergyGrid(20.0, 120.0, 1.0)


@dataclass
class Spectrum:
    """Photon fractions of the two sources on an :class:`EnergyGrid`.

    ``weights_per_energy`` has shape (2, n_energies); each row is nonnegative
    and sums to one. The total photon count per ray ``i0`` is carried
    separately.
    """

    grid: EnergyGrid
    weights_per_energy: np.ndarray
    i0: float

    def __post_init__(self):
        self.weights_per_energy = as_float_array(
            self.weights_per_energy, "weights_per_energy", shape=(2, self.grid.n_energies)
        )
        if np.any(self.weights_per_energy < 0):
            raise ValueError("spectrum weights must be nonnegative")
        sums = self.weights_per_energy.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > SPECTRUM_SUM_TOL):
            raise ValueError(f"spectrum rows must sum to 1 (got sums {sums})")
        if self.i0 <= 0:
            raise ValueError("i0 must be positive")


@dataclass
class MaterialBasis:
    """Mass-attenuation values (cm^2/mg) of the two basis materials."""

    grid: EnergyGrid
    phi: np.ndarray

    def __post_init__(self):
        self.phi = as_float_array(self.phi, "phi", shape=(2, self.grid.n_energies))
        if np.any(self.phi <= 0):
            raise ValueError("mass attenuation values must be strictly positive")
        gram = self.phi @ self.phi.T
        if not np.isfinite(np.linalg.cond(gram)) or np.linalg.matrix_rank(gram) < 2:
            raise ValueError("basis rows must be linearly independent")


def _parse_table(path):
    """Read a whitespace-separated numeric table, '#' comments allowed.

    Returns (energies, values) where values has one column per non-energy
    column in the file (1 for two-column tables, 2 for three-column ones).
    """
    energies, values = [], []
    n_cols = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) not in (2, 3):
                raise TableParseError(path, line_no, f"expected 2 or 3 columns, got {len(parts)}")
            if n_cols is None:
                n_cols = len(parts)
            elif len(parts) != n_cols:
                raise TableParseError(
                    path, line_no, f"inconsistent column count ({len(parts)} vs {n_cols})"
                )
            try:
                row = [float(tok) for tok in parts]
            except ValueError as exc:
                raise TableParseError(path, line_no, f"non-numeric entry: {exc}") from None
            energies.append(row[0])
            values.append(row[1:])
    if not energies:
        raise TableParseError(path, 0, "table is empty")
    energies = np.asarray(energies, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(energies)
    return energies[order], values[order]


def load_table(path, grid, kind, i0=1e5):
    """Load a tabulated spectrum or attenuation basis onto ``grid``.

    The file is plain text: comment lines start with '#', columns are
    whitespace separated, the first column is energy in keV. Two-column
    tables provide a single value channel that is used for both rows;
    three-column tables provide one channel per row. Values are linearly
    interpolated onto the grid nodes; spectrum rows are renormalized to unit
    sum afterwards.

    Parameters
    ----------
    path : str or Path
    grid : EnergyGrid
    kind : {"spectrum", "basis"}
    i0 : float
        Total photon count per ray, only used for ``kind="spectrum"``.

    Raises
    ------
    TableParseError
        Malformed row (reports the line number).
    TableRangeError
        The table does not cover the grid's energy range.
    """
    if kind not in ("spectrum", "basis"):
        raise ValueError(f"kind must be 'spectrum' or 'basis', got {kind!r}")
    energies, values = _parse_table(path)
    if energies[0] > grid.e_min or energies[-1] < grid.e_max:
        raise TableRangeError(
            f"table covers [{energies[0]}, {energies[-1]}] keV but the grid "
            f"needs [{grid.e_min}, {grid.e_max}]"
        )
    nodes = grid.energies
    cols = [np.interp(nodes, energies, values[:, c]) for c in range(values.shape[1])]
    rows = np.vstack(cols if len(cols) == 2 else [cols[0], cols[0]])
    if kind == "spectrum":
        sums = rows.sum(axis=1)
        if np.any(sums <= 0):
            raise ValueError("spectrum table has a nonpositive total weight")
        return Spectrum(grid, rows / sums[:, None], i0)
    return MaterialBasis(grid, rows)


def make_synthetic_spectrum(kind, grid, i0=1e5, energies=(50.0, 80.0), widths=(15.0, 25.0)):
    """Build a built-in two-source spectrum.

    Parameters
    ----------
    kind : {"delta-pair", "triangular-pair"}
        ``delta-pair`` puts all weight of each source at one energy (snapped
        to the nearest grid node with a warning if off-grid);
        ``triangular-pair`` builds two triangular bumps centered at
        ``energies`` with half-widths ``widths``.
    grid : EnergyGrid
    i0 : float
        Total photon count per ray.
    """
    nodes = grid.energies
    rows = np.zeros((2, grid.n_energies))
    if kind == "delta-pair":
        for row, e in enumerate(energies):
            idx = int(np.argmin(np.abs(nodes - e)))
            if abs(nodes[idx] - e) > 1e-9:
                warnings.warn(
                    f"delta energy {e} keV is off-grid; snapped to {nodes[idx]} keV",
                    stacklevel=2,
                )
            rows[row, idx] = 1.0
    elif kind == "triangular-pair":
        for row, (e, w) in enumerate(zip(energies, widths)):
            bump = np.maximum(0.0, 1.0 - np.abs(nodes - e) / w)
            if bump.sum() <= 0:
                raise ValueError(f"triangular bump at {e} keV has no support on the grid")
            rows[row] = bump / bump.sum()
    else:
        raise ValueError(f"unknown synthetic spectrum kind {kind!r}")
    return Spectrum(grid, rows, i0)


def make_builtin_basis(grid):
    """Soft-tissue-like two-material basis (adipose-like, fibroglandular-like).

    Each material mixes a photoelectric-like (E^-3) and a Compton-like (flat)
    term, in cm^2/mg; the mixes differ so the rows are independent.
    """
    e = grid.energies
    pe = (50.0 / e) ** 3
    phi = np.vstack(
        [
            1.2e-5 * pe + 1.7e-4,
            3.0e-5 * pe + 1.8e-4,
        ]
    )
    return MaterialBasis(grid, phi)


def _check_same_grid(spectrum, basis):
    if spectrum.grid != basis.grid:
        raise DimensionError("spectrum and basis must share the same energy grid")


def expected_counts(p_rays, spectrum, basis):
    """Mean detected counts for material line integrals ``p_rays``.

    Parameters
    ----------
    p_rays : ndarray, shape (n_rays, 2)
        Material line integrals in mg/cm^2.
    spectrum : Spectrum
    basis : MaterialBasis

    Returns
    -------
    ndarray, shape (n_rays, 2)
        Expected counts per ray for sources e1, e2; in (0, i0].
    """
    _check_same_grid(spectrum, basis)
    p = as_float_array(p_rays, "p_rays", ndim=2)
    if p.shape[1] != 2:
        raise DimensionError(f"p_rays must have shape (n_rays, 2), got {p.shape}")
    # attenuation exponent per ray per energy: p @ phi, shape (n_rays, n_E)
    transmission = np.exp(-(p @ basis.phi))
    return spectrum.i0 * (transmission @ spectrum.weights_per_energy.T)


def log_measurement(p_rays, spectrum, basis):
    """Noiseless negative-log measurements, ``-log(expected_counts / i0)``.

    This is the vector map from material line integrals to expected
    attenuation whose inverse the polynomial decomposer approximates.
    """
    counts = expected_counts(p_rays, spectrum, basis)
    return -np.log(counts / spectrum.i0)


def simulate(x, geometry, spectrum, basis, seed):
    """Simulate a Poisson-noisy dual-energy acquisition of ``x``.

    Line integrals of each material channel are taken with the geometry's
    forward projector, pushed through the poly-energetic count model, and
    Poisson noise is drawn with a counter-based (Philox) generator so the
    result is a pure function of ``(x, geometry, spectrum, basis, seed)``.
    Raw counts below one are clamped to one before the log; the number of
    clamped rays is reported on the returned sinogram.

    Returns
    -------
    EnergySinogram
    """
    from .containers import EnergySinogram, rays_to_sinogram
    from .projector import forward_project

    _check_same_grid(spectrum, basis)
    if np.any(x.densities < 0):
        raise ValueError("material image must be nonnegative")
    p = np.stack(
        [forward_project(x.densities[c], geometry) for c in range(2)]
    )  # (2, n_angles, n_det)
    p_rays = p.reshape(2, -1).T
    mean_counts = expected_counts(p_rays, spectrum, basis)
    check_finite(mean_counts, "expected counts")
    rng = np.random.Generator(np.random.Philox(seed))
    counts = rng.poisson(mean_counts).astype(np.float64)
    n_clamped = int(np.sum(counts < COUNT_FLOOR))
    counts = np.maximum(counts, COUNT_FLOOR)
    y = -np.log(counts / spectrum.i0)
    return EnergySinogram(
        y=rays_to_sinogram(y, geometry.n_angles, geometry.n_detectors),
        weights=rays_to_sinogram(counts, geometry.n_angles, geometry.n_detectors),
        n_clamped=n_clamped,
    )
