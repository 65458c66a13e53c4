"""Raw-array persistence with text sidecar headers, plus the run manifest.

File conventions:

* images: ``<base>.raw`` holds channel-major float32 little-endian planes
  (material 1 plane then material 2), ``<base>.hdr`` is a ``key value`` text
  sidecar with width, height, pixel_size;
* sinograms: angle-major float32 planes per channel with a sidecar carrying
  n_angles, n_detectors, spacing (energy sinograms store four planes:
  y_e1, y_e2, w_e1, w_e2);
* decomposer / denoiser weights: float64 blocks with a text header;
* manifest: append-only JSON lines under a lock file; identical entries are
  not appended twice so reruns stay byte-identical.
"""

import json
import os
import time
from pathlib import Path

import numpy as np

from .containers import EnergySinogram, MaterialImage, MaterialSinogram
from .decomposition import PolynomialDecomposer
from .denoiser import DenoiserParams
from .errors import DependencyError

MANIFEST_NAME = "manifest.jsonl"


def _write_header(path, fields):
    lines = [f"{key} {value}" for key, value in fields.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_header(path):
    fields = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition(" ")
        fields[key] = value.strip()
    return fields


def write_image(base_path, image):
    """Persist a MaterialImage as ``<base>.raw`` + ``<base>.hdr``."""
    base = Path(base_path)
    base.with_suffix(".raw").write_bytes(
        np.ascontiguousarray(image.densities, dtype="<f4").tobytes()
    )
    _write_header(
        base.with_suffix(".hdr"),
        {
            "kind": "material_image",
            "width": image.width,
            "height": image.height,
            "pixel_size": repr(float(image.pixel_size)),
            "channels": 2,
            "dtype": "float32-le",
        },
    )


def read_image(base_path):
    base = Path(base_path)
    hdr = _read_header(base.with_suffix(".hdr"))
    width, height = int(hdr["width"]), int(hdr["height"])
    data = np.frombuffer(base.with_suffix(".raw").read_bytes(), dtype="<f4")
    densities = data.reshape(2, height, width).astype(np.float64)
    return MaterialImage(densities, float(hdr["pixel_size"]))


def write_sinogram(base_path, sinogram, detector_spacing):
    """Persist an EnergySinogram (4 planes) or MaterialSinogram (2 planes)."""
    base = Path(base_path)
    if isinstance(sinogram, EnergySinogram):
        planes = np.concatenate([sinogram.y, sinogram.weights], axis=0)
        kind = "energy_sinogram"
        extra = {"n_clamped": sinogram.n_clamped}
    elif isinstance(sinogram, MaterialSinogram):
        planes = sinogram.p
        kind = "material_sinogram"
        extra = {}
    else:
        raise TypeError(f"cannot persist {type(sinogram).__name__}")
    base.with_suffix(".raw").write_bytes(
        np.ascontiguousarray(planes, dtype="<f4").tobytes()
    )
    fields = {
        "kind": kind,
        "n_angles": planes.shape[1],
        "n_detectors": planes.shape[2],
        "spacing": repr(float(detector_spacing)),
        "channels": planes.shape[0],
        "dtype": "float32-le",
    }
    fields.update(extra)
    _write_header(base.with_suffix(".hdr"), fields)


def read_sinogram(base_path):
    """Load a persisted sinogram; returns (object, detector_spacing)."""
    base = Path(base_path)
    hdr = _read_header(base.with_suffix(".hdr"))
    n_angles, n_det = int(hdr["n_angles"]), int(hdr["n_detectors"])
    channels = int(hdr["channels"])
    data = np.frombuffer(base.with_suffix(".raw").read_bytes(), dtype="<f4")
    planes = data.reshape(channels, n_angles, n_det).astype(np.float64)
    spacing = float(hdr["spacing"])
    if hdr["kind"] == "energy_sinogram":
        sino = EnergySinogram(planes[:2], planes[2:], int(hdr.get("n_clamped", 0)))
        return sino, spacing
    return MaterialSinogram(planes), spacing


def write_decomposer(base_path, decomposer):
    base = Path(base_path)
    _write_header(
        base.with_suffix(".hdr"),
        {
            "kind": "polynomial_decomposer",
            "degree_i": decomposer.degree_i,
            "degree_j": decomposer.degree_j,
            "scale_offset": " ".join(repr(float(v)) for v in decomposer.scale_offset_),
            "scale_slope": " ".join(repr(float(v)) for v in decomposer.scale_slope_),
            "dtype": "float64-le",
        },
    )
    base.with_suffix(".coef").write_bytes(
        np.ascontiguousarray(decomposer.theta_, dtype="<f8").tobytes()
    )


def read_decomposer(base_path):
    base = Path(base_path)
    hdr = _read_header(base.with_suffix(".hdr"))
    dec = PolynomialDecomposer(int(hdr["degree_i"]), int(hdr["degree_j"]))
    dec.scale_offset_ = np.array([float(v) for v in hdr["scale_offset"].split()])
    dec.scale_slope_ = np.array([float(v) for v in hdr["scale_slope"].split()])
    data = np.frombuffer(base.with_suffix(".coef").read_bytes(), dtype="<f8")
    dec.theta_ = data.reshape(dec.n_terms, 2).copy()
    return dec


def write_denoiser(base_path, params):
    base = Path(base_path)
    _write_header(
        base.with_suffix(".hdr"),
        {
            "kind": "denoiser",
            "channels": " ".join(str(c) for c in params.channels),
            "kernel": params.kernel,
            "dtype": "float64-le",
        },
    )
    blocks = [np.ascontiguousarray(t, dtype="<f8").tobytes() for t in params.flat()]
    base.with_suffix(".wts").write_bytes(b"".join(blocks))


def read_denoiser(base_path):
    base = Path(base_path)
    hdr = _read_header(base.with_suffix(".hdr"))
    channels = tuple(int(c) for c in hdr["channels"].split())
    kernel = int(hdr["kernel"])
    data = np.frombuffer(base.with_suffix(".wts").read_bytes(), dtype="<f8")
    layers = []
    offset = 0
    for c_in, c_out in zip(channels[:-1], channels[1:]):
        w_size = c_out * c_in * kernel * kernel
        w = data[offset : offset + w_size].reshape(c_out, c_in, kernel, kernel).copy()
        offset += w_size
        b = data[offset : offset + c_out].copy()
        offset += c_out
        layers.append((w, b))
    return DenoiserParams(channels, kernel, layers)


def write_loss_log(path, loss_log):
    lines = [f"{epoch} {float(loss)!r}" for epoch, loss in loss_log]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_loss_log(path):
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        epoch, loss = line.split()
        rows.append((int(epoch), float(loss)))
    return rows


def write_report(path, fields):
    """Key-value run report (CG iterations, residuals, clamp counters)."""
    _write_header(path, fields)


class _ManifestLock:
    """Cooperative lock file guarding manifest appends."""

    def __init__(self, directory):
        self.path = Path(directory) / (MANIFEST_NAME + ".lock")

    def __enter__(self):
        for _ in range(500):
            try:
                self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                return self
            except FileExistsError:
                time.sleep(0.01)
        raise TimeoutError(f"could not acquire manifest lock {self.path}")

    def __exit__(self, *exc):
        os.close(self._fd)
        os.unlink(self.path)
        return False


def append_manifest(directory, entry):
    """Append one JSON entry; identical existing entries are not duplicated."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    line = json.dumps(entry, sort_keys=True)
    path = directory / MANIFEST_NAME
    with _ManifestLock(directory):
        if path.exists():
            existing = path.read_text(encoding="utf-8").splitlines()
            if line in existing:
                return
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")


def read_manifest(directory):
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise DependencyError(str(path))
    return [
        json.loads(line)
        for line in path.read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]


def find_manifest_entry(entries, **filters):
    """First manifest entry matching all key/value filters, else None."""
    for entry in entries:
        if all(entry.get(key) == value for key, value in filters.items()):
            return entry
    return None
