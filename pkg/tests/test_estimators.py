import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from dectomo.estimators import E2EDecomp, FBPDecomp
from dectomo.metrics import material_psnr
from dectomo.phantoms import phantom_family
from dectomo.projector import Geometry
from dectomo.spectral import simulate


@pytest.fixture(scope="module")
def small_setup(triangular_spectrum, basis, poly_decomposer):
    n = 24
    geom = Geometry.for_image(n, n, 6.4 / n, 16)
    phantoms = phantom_family([31, 0], 2, n, n, 6.4 / n)
    sinos = [
        simulate(ph, geom, triangular_spectrum, basis, seed=[5, i])
        for i, ph in enumerate(phantoms)
    ]
    return geom, phantoms, sinos


class TestE2EDecomp:
    def test_get_params_round_trip(self, poly_decomposer, small_setup):
        geom, _, _ = small_setup
        est = E2EDecomp(poly_decomposer, geom, k_outer=2, epochs=1)
        params = est.get_params()
        assert params["k_outer"] == 2
        cloned = clone(est)
        assert cloned.get_params()["epochs"] == 1

    def test_predict_requires_fit(self, poly_decomposer, small_setup):
        geom, _, sinos = small_setup
        with pytest.raises(NotFittedError):
            E2EDecomp(poly_decomposer, geom).predict(sinos[0])

    def test_fit_predict(self, poly_decomposer, small_setup):
        geom, phantoms, sinos = small_setup
        est = E2EDecomp(
            poly_decomposer,
            geom,
            k_outer=2,
            cg_max_iter=15,
            epochs=3,
            batch_size=1,
            learning_rate=3e-6,
            seed=1,
        )
        est.fit(sinos, phantoms)
        assert est.loss_log_[-1][1] <= est.loss_log_[0][1]
        image = est.predict(sinos[0])
        assert image.densities.shape == (2, 24, 24)
        assert image.densities.min() >= 0.0
        both = est.predict(sinos)
        assert len(both) == 2

    def test_predict_with_explicit_weights(self, poly_decomposer, small_setup):
        from dectomo.denoiser import zero_denoiser

        geom, phantoms, sinos = small_setup
        est = E2EDecomp(poly_decomposer, geom, k_outer=2, cg_max_iter=15)
        image = est.predict(sinos[0], denoiser=zero_denoiser())
        _, _, db = material_psnr(phantoms[0], image)
        assert np.isfinite(db)


class TestFBPDecomp:
    def test_fit_is_noop_predict_works(self, poly_decomposer, small_setup):
        geom, phantoms, sinos = small_setup
        est = FBPDecomp(poly_decomposer, geom, filter_name="hann").fit()
        image = est.predict(sinos[0])
        assert image.densities.shape == (2, 24, 24)
        assert image.densities.min() >= 0.0

    def test_sklearn_clone(self, poly_decomposer, small_setup):
        geom, _, _ = small_setup
        est = FBPDecomp(poly_decomposer, geom, filter_name="hann")
        assert clone(est).get_params()["filter_name"] == "hann"
