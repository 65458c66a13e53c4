"""Scikit-learn style estimators wrapping the reconstruction pipeline.

``PolynomialDecomposer`` (in :mod:`dectomo.decomposition`) is the
fit/transform half of the pipeline; the classes here add fit/predict
reconstructors so the whole chain composes with standard tooling:

    dec = PolynomialDecomposer().fit(y_calib, p_calib, w_calib)
    rec = E2EDecomp(dec, geometry).fit(train_sinograms, train_images)
    image = rec.predict(sinogram)
"""

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .recon import ReconConfig, e2e_decomp, fbp_decomp
from .training import TrainConfig, train


class E2EDecomp(BaseEstimator):
    """Unrolled model-based reconstructor with a learned denoising prior.

    ``fit`` trains the shared denoiser weights end to end on
    (sinogram, material image) pairs; ``predict`` runs the unrolled
    DC/denoise loop on new sinograms.

    Parameters
    ----------
    decomposer : fitted PolynomialDecomposer
    geometry : Geometry
    lam : float or None
        Regularization weight (None = auto scale).
    k_outer, cg_max_iter, cg_rel_tol :
        Unrolled-loop and CG controls, see :class:`ReconConfig`.
    epochs, batch_size, learning_rate, momentum, seed :
        Training controls, see :class:`TrainConfig`.
    """

    def __init__(
        self,
        decomposer,
        geometry,
        lam=None,
        k_outer=3,
        cg_max_iter=20,
        cg_rel_tol=1e-6,
        epochs=40,
        batch_size=2,
        learning_rate=1e-3,
        momentum=0.9,
        seed=0,
    ):
        self.decomposer = decomposer
        self.geometry = geometry
        self.lam = lam
        self.k_outer = k_outer
        self.cg_max_iter = cg_max_iter
        self.cg_rel_tol = cg_rel_tol
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.seed = seed

    def _recon_config(self):
        return ReconConfig(
            lam=self.lam,
            k_outer=self.k_outer,
            cg_max_iter=self.cg_max_iter,
            cg_rel_tol=self.cg_rel_tol,
        )

    def fit(self, X, y):
        """Train the denoiser on sinogram/image pairs.

        Parameters
        ----------
        X : list of EnergySinogram
        y : list of MaterialImage
        """
        config = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            seed=self.seed,
        )
        self.denoiser_params_, self.loss_log_ = train(
            list(zip(X, y)), self.decomposer, self.geometry, self._recon_config(), config
        )
        return self

    def predict(self, X, denoiser=None):
        """Reconstruct one sinogram (or a list of them).

        ``denoiser=None`` uses the weights learned by :meth:`fit`.
        """
        params = denoiser if denoiser is not None else getattr(self, "denoiser_params_", None)
        if params is None:
            raise NotFittedError("E2EDecomp must be fitted (or given denoiser weights)")
        config = self._recon_config()
        if isinstance(X, (list, tuple)):
            return [
                e2e_decomp(s, self.decomposer, params, config, self.geometry)[0] for s in X
            ]
        return e2e_decomp(X, self.decomposer, params, config, self.geometry)[0]


class FBPDecomp(BaseEstimator):
    """Decompose-then-FBP baseline reconstructor (no learned parameters)."""

    def __init__(self, decomposer, geometry, filter_name="ram-lak"):
        self.decomposer = decomposer
        self.geometry = geometry
        self.filter_name = filter_name

    def fit(self, X=None, y=None):
        return self

    def predict(self, X):
        if isinstance(X, (list, tuple)):
            return [fbp_decomp(s, self.decomposer, self.geometry, self.filter_name) for s in X]
        return fbp_decomp(X, self.decomposer, self.geometry, self.filter_name)
