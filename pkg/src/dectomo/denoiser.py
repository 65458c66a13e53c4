"""Residual convolutional noise estimator for two-channel material images.

The denoiser computes ``D(x) = x - N(x)`` where ``N`` is a small CNN
(default 2 -> 16 -> 16 -> 2 channels, 3x3 kernels, ReLU between layers,
zero-padded borders) estimating the noise in the image. Weights are shared
across all unrolled iterations.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DimensionError

DEFAULT_CHANNELS = (2, 16, 16, 2)
DEFAULT_KERNEL = 3


@dataclass
class DenoiserParams:
    """Layer specs and weight tensors of the noise estimator.

    ``layers`` is a list of ``(weight, bias)`` pairs; weight ``l`` has shape
    ``(channels[l+1], channels[l], k, k)``.
    """

    channels: tuple
    kernel: int
    layers: list

    def __post_init__(self):
        if self.kernel % 2 != 1:
            raise ValueError("kernel size must be odd")
        for w, b in self.layers:
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("denoiser weights must be finite")

    def copy(self):
        return DenoiserParams(
            self.channels, self.kernel, [(w.copy(), b.copy()) for w, b in self.layers]
        )

    def flat(self):
        """All weight tensors in layer order (w0, b0, w1, b1, ...)."""
        out = []
        for w, b in self.layers:
            out.extend([w, b])
        return out

    @property
    def n_parameters(self):
        return sum(w.size + b.size for w, b in self.layers)

    def apply(self, x):
        """Denoise a (2, H, W) image: ``x - N(x)`` (plain numpy path)."""
        return denoise(self, x)


def init_denoiser(seed, channels=DEFAULT_CHANNELS, kernel=DEFAULT_KERNEL, weight_scale=None):
    """Random small-weight initialization, deterministic given ``seed``."""
    rng = np.random.Generator(np.random.Philox(seed))
    layers = []
    for c_in, c_out in zip(channels[:-1], channels[1:]):
        scale = weight_scale
        if scale is None:
            scale = 1.0 / np.sqrt(c_in * kernel * kernel)
        w = rng.normal(0.0, scale, size=(c_out, c_in, kernel, kernel))
        b = np.zeros(c_out)
        layers.append((w, b))
    return DenoiserParams(tuple(channels), kernel, layers)


def zero_denoiser(channels=DEFAULT_CHANNELS, kernel=DEFAULT_KERNEL):
    """All-zero weights: the identity denoiser (zero noise estimate)."""
    layers = [
        (np.zeros((c_out, c_in, kernel, kernel)), np.zeros(c_out))
        for c_in, c_out in zip(channels[:-1], channels[1:])
    ]
    return DenoiserParams(tuple(channels), kernel, layers)


def _check_input(params, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != params.channels[0]:
        raise DimensionError(
            f"denoiser expects ({params.channels[0]}, H, W) input, got {x.shape}"
        )
    return x


def network_var(param_vars, x_var, n_layers):
    """Tape subgraph of the noise estimator ``N(x)``."""
    h = x_var
    for layer in range(n_layers):
        h = ad.conv2d(h, param_vars[2 * layer], param_vars[2 * layer + 1])
        if layer < n_layers - 1:
            h = ad.relu(h)
    return h


def denoise_var(param_vars, x_var, n_layers):
    """Tape subgraph of the full denoiser ``x - N(x)``."""
    return ad.sub(x_var, network_var(param_vars, x_var, n_layers))


def denoise(params, x):
    """Apply ``D(x) = x - N(x)`` outside the tape."""
    x = _check_input(params, x)
    h = x
    n = len(params.layers)
    for i, (w, b) in enumerate(params.layers):
        h, _ = ad._conv_value(h, w, b)
        if i < n - 1:
            h = np.maximum(h, 0.0)
    return x - h
