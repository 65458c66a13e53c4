import numpy as np
import pytest

from dectomo import io
from dectomo.containers import EnergySinogram, MaterialImage, MaterialSinogram
from dectomo.decomposition import PolynomialDecomposer
from dectomo.denoiser import init_denoiser
from dectomo.errors import DependencyError


def test_image_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    # float32 representable values survive the roundtrip exactly
    densities = rng.uniform(0.0, 1000.0, size=(2, 12, 10)).astype(np.float32)
    image = MaterialImage(densities.astype(np.float64), 0.25)
    io.write_image(tmp_path / "img", image)
    back = io.read_image(tmp_path / "img")
    np.testing.assert_array_equal(back.densities, image.densities)
    assert back.pixel_size == 0.25
    header = (tmp_path / "img.hdr").read_text()
    assert "width 10" in header and "height 12" in header


def test_energy_sinogram_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    y = rng.uniform(0.0, 3.0, size=(2, 6, 9)).astype(np.float32).astype(np.float64)
    w = rng.uniform(1.0, 10.0, size=(2, 6, 9)).astype(np.float32).astype(np.float64)
    sino = EnergySinogram(y, w, n_clamped=4)
    io.write_sinogram(tmp_path / "sino", sino, detector_spacing=0.2)
    back, spacing = io.read_sinogram(tmp_path / "sino")
    assert isinstance(back, EnergySinogram)
    np.testing.assert_array_equal(back.y, y)
    np.testing.assert_array_equal(back.weights, w)
    assert back.n_clamped == 4
    assert spacing == 0.2


def test_material_sinogram_roundtrip(tmp_path):
    p = np.random.default_rng(2).normal(size=(2, 4, 7)).astype(np.float32)
    sino = MaterialSinogram(p.astype(np.float64))
    io.write_sinogram(tmp_path / "msino", sino, detector_spacing=0.1)
    back, _ = io.read_sinogram(tmp_path / "msino")
    assert isinstance(back, MaterialSinogram)
    np.testing.assert_array_equal(back.p, sino.p)


def test_decomposer_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    y = rng.uniform(0.0, 2.0, size=(100, 2))
    p = rng.uniform(0.0, 5.0, size=(100, 2))
    dec = PolynomialDecomposer(2, 3).fit(y, p)
    io.write_decomposer(tmp_path / "dec", dec)
    back = io.read_decomposer(tmp_path / "dec")
    assert (back.degree_i, back.degree_j) == (2, 3)
    np.testing.assert_array_equal(back.theta_, dec.theta_)
    np.testing.assert_array_equal(back.scale_offset_, dec.scale_offset_)
    np.testing.assert_array_equal(back.scale_slope_, dec.scale_slope_)
    probe = rng.uniform(0.0, 2.0, size=(10, 2))
    np.testing.assert_array_equal(back.transform(probe), dec.transform(probe))


def test_denoiser_roundtrip(tmp_path):
    params = init_denoiser(5)
    io.write_denoiser(tmp_path / "den", params)
    back = io.read_denoiser(tmp_path / "den")
    assert back.channels == params.channels
    assert back.kernel == params.kernel
    for got, want in zip(back.flat(), params.flat()):
        np.testing.assert_array_equal(got, want)


def test_loss_log_roundtrip(tmp_path):
    log = [(0, 123.456), (1, 98.7), (2, 0.0001230000000000001)]
    io.write_loss_log(tmp_path / "loss.txt", log)
    assert io.read_loss_log(tmp_path / "loss.txt") == log


def test_manifest_append_read_and_dedupe(tmp_path):
    io.append_manifest(tmp_path, {"kind": "truth", "index": 0, "path": "a"})
    io.append_manifest(tmp_path, {"kind": "sino", "index": 0, "path": "b"})
    io.append_manifest(tmp_path, {"kind": "truth", "index": 0, "path": "a"})  # dup
    entries = io.read_manifest(tmp_path)
    assert len(entries) == 2
    assert io.find_manifest_entry(entries, kind="sino")["path"] == "b"
    assert io.find_manifest_entry(entries, kind="missing") is None


def test_manifest_missing_raises(tmp_path):
    with pytest.raises(DependencyError):
        io.read_manifest(tmp_path / "nowhere")
