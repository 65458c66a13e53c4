"""PSNR evaluation and the plain-text metrics table."""

import math

import numpy as np

from .errors import DimensionError

TABLE_COLUMNS = ("angles", "method", "material", "psnr_db")


def psnr(truth, recon, peak=None):
    """Peak signal-to-noise ratio in dB, ``10 log10(peak^2 / MSE)``.

    ``peak`` defaults to the maximum of ``truth``. A zero-error pair returns
    ``inf``.
    """
    truth = np.asarray(truth, dtype=np.float64)
    recon = np.asarray(recon, dtype=np.float64)
    if truth.shape != recon.shape:
        raise DimensionError(f"shape mismatch: truth {truth.shape} vs recon {recon.shape}")
    peak = float(truth.max()) if peak is None else float(peak)
    mse = float(np.mean((truth - recon) ** 2))
    if mse == 0.0:
        return math.inf
    if peak == 0.0:
        return -math.inf
    return 10.0 * math.log10(peak * peak / mse)


def material_psnr(truth_image, recon_image):
    """Per-channel PSNR (peak = per-channel truth maximum) plus their mean."""
    if truth_image.densities.shape != recon_image.densities.shape:
        raise DimensionError(
            f"shape mismatch: truth {truth_image.densities.shape} "
            f"vs recon {recon_image.densities.shape}"
        )
    values = [
        psnr(truth_image.densities[c], recon_image.densities[c]) for c in range(2)
    ]
    return values[0], values[1], (values[0] + values[1]) / 2.0


def _format_value(value):
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.9f}"


def format_metrics_table(rows):
    """Render (angles, method, material, psnr_db) rows as a text table."""
    lines = ["\t".join(TABLE_COLUMNS)]
    for angles, method, material, value in rows:
        lines.append(f"{angles}\t{method}\t{material}\t{_format_value(value)}")
    return "\n".join(lines) + "\n"


def parse_metrics_table(text):
    rows = []
    lines = [line for line in text.splitlines() if line.strip()]
    for line in lines[1:]:
        angles, method, material, value = line.split("\t")
        rows.append((int(angles), method, material, float(value)))
    return rows
