import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dectomo.containers import MaterialImage
from dectomo.errors import DimensionError, TableParseError, TableRangeError
from dectomo.phantoms import Ellipse, make_phantom
from dectomo.projector import Geometry
from dectomo.spectral import (
    EnergyGrid,
    MaterialBasis,
    Spectrum,
    expected_counts,
    load_table,
    log_measurement,
    make_builtin_basis,
    make_synthetic_spectrum,
    simulate,
)


class TestEnergyGrid:
    def test_nodes(self):
        g = EnergyGrid(20.0, 30.0, 2.0)
        assert g.n_energies == 6
        np.testing.assert_allclose(g.energies, [20, 22, 24, 26, 28, 30])

    @pytest.mark.parametrize("args", [(20, 20, 1), (20, 30, 0), (20, 30, -1), (20, 20.5, 1)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            EnergyGrid(*args)


class TestLoadTable:
    def _write(self, tmp_path, text):
        path = tmp_path / "table.txt"
        path.write_text(text)
        return path

    def test_values_at_nodes_verbatim(self, tmp_path):
        g = EnergyGrid(20.0, 24.0, 1.0)
        values = [0.3, 0.1, 0.4, 0.2, 0.5]
        text = "\n".join(
            f"{e} {v} {w}" for e, v, w in zip(g.energies, values, reversed(values))
        )
        basis = load_table(self._write(tmp_path, text), g, "basis")
        np.testing.assert_allclose(basis.phi[0], values, rtol=0, atol=0)
        np.testing.assert_allclose(basis.phi[1], values[::-1], rtol=0, atol=0)

    def test_two_nodes_midpoint_mean(self, tmp_path):
        g = EnergyGrid(20.0, 30.0, 5.0)
        basis = load_table(self._write(tmp_path, "20 1.0 4.0\n30 3.0 5.0\n"), g, "basis")
        assert basis.phi[0][1] == pytest.approx((1.0 + 3.0) / 2.0, abs=0)
        assert basis.phi[1][1] == pytest.approx((4.0 + 5.0) / 2.0, abs=0)

    def test_random_table_vs_pointwise_oracle(self, tmp_path):
        rng = np.random.default_rng(42)
        energies = np.sort(rng.uniform(10.0, 130.0, size=10))
        energies[0], energies[-1] = 10.0, 130.0
        vals = rng.uniform(0.1, 2.0, size=10)
        text = "\n".join(
            f"{float(e)!r} {float(v)!r} {float(v) + 1.0!r}" for e, v in zip(energies, vals)
        )
        g = EnergyGrid(20.0, 120.0, 1.0)
        basis = load_table(self._write(tmp_path, text), g, "basis")

        def interp_oracle(e):
            # direct per-point bracketing + linear formula
            k = 0
            while energies[k + 1] < e:
                k += 1
            frac = (e - energies[k]) / (energies[k + 1] - energies[k])
            return vals[k] * (1 - frac) + vals[k + 1] * frac

        oracle = np.array([interp_oracle(e) for e in g.energies])
        np.testing.assert_allclose(basis.phi[0], oracle, rtol=0, atol=1e-12)
        np.testing.assert_allclose(basis.phi[1], oracle + 1.0, rtol=0, atol=1e-12)

    def test_comments_and_three_columns(self, tmp_path):
        g = EnergyGrid(20.0, 22.0, 1.0)
        text = "# header\n20 1.0 2.0\n21 1.0 2.1  # inline\n22 1.0 2.2\n"
        basis = load_table(self._write(tmp_path, text), g, "basis")
        np.testing.assert_allclose(basis.phi[0], 1.0)
        np.testing.assert_allclose(basis.phi[1], [2.0, 2.1, 2.2])

    def test_malformed_row_reports_line(self, tmp_path):
        path = self._write(tmp_path, "20 1.0\n21 oops\n22 1.0\n")
        g = EnergyGrid(20.0, 22.0, 1.0)
        with pytest.raises(TableParseError) as excinfo:
            load_table(path, g, "basis")
        assert excinfo.value.line_no == 2

    def test_range_not_covered(self, tmp_path):
        path = self._write(tmp_path, "30 1.0\n90 1.0\n")
        with pytest.raises(TableRangeError):
            load_table(path, EnergyGrid(20.0, 120.0, 1.0), "basis")

    def test_spectrum_renormalized(self, tmp_path):
        path = self._write(tmp_path, "10 2.0\n130 6.0\n")
        spec = load_table(path, EnergyGrid(20.0, 120.0, 1.0), "spectrum", i0=1e5)
        np.testing.assert_allclose(spec.weights_per_energy.sum(axis=1), 1.0, atol=1e-12)
        assert spec.i0 == 1e5


class TestSyntheticSpectrum:
    def test_delta_pair_one_hot(self, grid):
        spec = make_synthetic_spectrum("delta-pair", grid, 1e5, energies=(50.0, 80.0))
        for row, energy in zip(spec.weights_per_energy, (50.0, 80.0)):
            assert np.count_nonzero(row) == 1
            assert row[np.argmax(grid.energies == energy)] == 1.0

    def test_delta_off_grid_snaps_with_warning(self, grid):
        with pytest.warns(UserWarning, match="snapped"):
            spec = make_synthetic_spectrum("delta-pair", grid, 1e5, energies=(50.4, 80.0))
        assert spec.weights_per_energy[0][grid.energies.tolist().index(50.0)] == 1.0

    def test_triangular_rows_normalized(self, grid):
        spec = make_synthetic_spectrum("triangular-pair", grid, 1e5)
        np.testing.assert_allclose(spec.weights_per_energy.sum(axis=1), 1.0, atol=1e-12)

    def test_i0_recorded(self, grid):
        for kind in ("delta-pair", "triangular-pair"):
            assert make_synthetic_spectrum(kind, grid, 1e5).i0 == 1e5

    def test_unknown_kind(self, grid):
        with pytest.raises(ValueError):
            make_synthetic_spectrum("flat", grid, 1e5)


class TestPhantom:
    def test_empty_spec_all_zero(self):
        image = make_phantom([], 32, 32, 0.1)
        assert not image.densities.any()

    def test_disc_pixel_count_matches_area(self):
        r, h, n = 3.0, 0.1, 128
        image = make_phantom([Ellipse(0, 0, r, r, 0.0, 500.0, 0.0)], n, n, h)
        count = np.count_nonzero(image.densities[0])
        expected = np.pi * r * r / (h * h)
        assert abs(count - expected) <= 0.02 * expected

    def test_nested_discs_overwrite(self):
        image = make_phantom(
            [
                Ellipse(0, 0, 1.0, 1.0, 0.0, 500.0, 100.0),
                Ellipse(0, 0, 0.4, 0.4, 0.0, 0.0, 900.0),
            ],
            64,
            64,
            0.05,
        )
        center = image.densities[:, 32, 32]
        np.testing.assert_allclose(center, [0.0, 900.0])
        edge = image.densities[:, 32, 32 + 16]
        np.testing.assert_allclose(edge, [500.0, 100.0])

    def test_negative_density_rejected(self):
        with pytest.raises(ValueError):
            Ellipse(0, 0, 1, 1, 0, -5.0, 0.0)


class TestExpectedCounts:
    def test_zero_path_gives_i0(self, triangular_spectrum, basis):
        counts = expected_counts(np.zeros((5, 2)), triangular_spectrum, basis)
        np.testing.assert_allclose(counts, triangular_spectrum.i0, rtol=1e-14)

    def test_delta_pair_single_energy_beer_lambert(self, grid, delta_spectrum, basis):
        p = np.array([[1500.0, 700.0], [4000.0, 2500.0]])
        counts = expected_counts(p, delta_spectrum, basis)
        for k, energy in enumerate((50.0, 80.0)):
            idx = int(np.argmax(grid.energies == energy))
            expected = delta_spectrum.i0 * np.exp(
                -(p[:, 0] * basis.phi[0, idx] + p[:, 1] * basis.phi[1, idx])
            )
            np.testing.assert_allclose(counts[:, k], expected, rtol=1e-13)

    def test_three_node_hand_summed_oracle(self):
        g = EnergyGrid(20.0, 40.0, 10.0)
        weights = np.array([[0.2, 0.5, 0.3], [0.6, 0.3, 0.1]])
        spec = Spectrum(g, weights, 1e4)
        phi = np.array([[3e-4, 2e-4, 1.5e-4], [4e-4, 2.5e-4, 1.8e-4]])
        basis3 = MaterialBasis(g, phi)
        p = np.array([[1000.0, 2000.0]])
        oracle = np.zeros(2)
        for k in range(2):
            for e in range(3):
                oracle[k] += weights[k, e] * np.exp(
                    -(p[0, 0] * phi[0, e] + p[0, 1] * phi[1, e])
                )
        oracle *= 1e4
        np.testing.assert_allclose(
            expected_counts(p, spec, basis3)[0], oracle, rtol=1e-14
        )

    def test_grid_mismatch(self, triangular_spectrum):
        g = EnergyGrid(20.0, 60.0, 1.0)
        other = MaterialBasis(
            g, np.vstack([np.linspace(1e-4, 2e-4, 41), np.linspace(3e-4, 1e-4, 41)])
        )
        with pytest.raises(DimensionError):
            expected_counts(np.zeros((1, 2)), triangular_spectrum, other)

    @settings(max_examples=25, deadline=None)
    @given(
        p1=st.floats(0.0, 5000.0),
        p2=st.floats(0.0, 5000.0),
        bump1=st.floats(1.0, 1000.0),
        bump2=st.floats(1.0, 1000.0),
    )
    def test_monotone_decreasing_in_path(self, p1, p2, bump1, bump2):
        g = EnergyGrid(20.0, 120.0, 1.0)
        spec = make_synthetic_spectrum("triangular-pair", g, 1e5)
        b = make_builtin_basis(g)
        base = expected_counts(np.array([[p1, p2]]), spec, b)
        more = expected_counts(np.array([[p1 + bump1, p2 + bump2]]), spec, b)
        assert np.all(more < base)


class TestSimulate:
    def test_zero_image_zero_log_mean(self, triangular_spectrum, basis):
        geom = Geometry.for_image(32, 32, 0.2, 220)  # 220 angles * 48 detectors > 1e4 rays
        x = MaterialImage(np.zeros((2, 32, 32)), 0.2)
        sino = simulate(x, geom, triangular_spectrum, basis, seed=5)
        assert geom.n_rays >= 10_000
        assert abs(sino.y.mean()) <= 3.0 / np.sqrt(triangular_spectrum.i0)
        assert sino.n_clamped == 0

    def test_determinism_bit_identical(self, small_phantom, triangular_spectrum, basis):
        geom = Geometry.for_image(16, 16, 0.1, 12)
        a = simulate(small_phantom, geom, triangular_spectrum, basis, seed=99)
        b = simulate(small_phantom, geom, triangular_spectrum, basis, seed=99)
        assert np.array_equal(a.y, b.y)
        assert np.array_equal(a.weights, b.weights)

    def test_different_seeds_differ(self, small_phantom, triangular_spectrum, basis):
        geom = Geometry.for_image(16, 16, 0.1, 12)
        a = simulate(small_phantom, geom, triangular_spectrum, basis, seed=1)
        b = simulate(small_phantom, geom, triangular_spectrum, basis, seed=2)
        assert not np.array_equal(a.y, b.y)

    def test_weights_are_clamped_counts(self, small_phantom, triangular_spectrum, basis):
        geom = Geometry.for_image(16, 16, 0.1, 12)
        sino = simulate(small_phantom, geom, triangular_spectrum, basis, seed=3)
        assert np.all(sino.weights >= 1.0)
        np.testing.assert_allclose(
            sino.y, -np.log(sino.weights / triangular_spectrum.i0), rtol=1e-12
        )

    def test_heavy_attenuation_clamps_and_counts(self, grid, basis):
        spec = make_synthetic_spectrum("delta-pair", grid, 10.0)  # tiny flux
        dense = MaterialImage(np.full((2, 16, 16), 5000.0), 0.5)
        geom = Geometry.for_image(16, 16, 0.5, 8)
        sino = simulate(dense, geom, spec, basis, seed=0)
        assert sino.n_clamped > 0
        assert np.isfinite(sino.y).all()

    def test_monoenergetic_log_is_linear_in_path(self, grid, delta_spectrum, basis):
        # the exactness lever used by the decomposition tests
        rng = np.random.default_rng(0)
        p = rng.uniform(0.0, 5000.0, size=(50, 2))
        y = log_measurement(p, delta_spectrum, basis)
        idx = [int(np.argmax(grid.energies == e)) for e in (50.0, 80.0)]
        m = np.array([[basis.phi[0, i], basis.phi[1, i]] for i in idx])
        np.testing.assert_allclose(y, p @ m.T, rtol=1e-10, atol=1e-12)
