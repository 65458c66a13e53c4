"""End-to-end training of the denoiser through the unrolled reconstruction.

The gradient flows through each data-consistency solve implicitly: the CG
solution satisfies ``(H + lam I) x = rhs + lam z``, so the adjoint of
``x`` with respect to ``z`` applied to an upstream gradient ``g`` is
``lam (H + lam I)^-1 g`` -- one extra CG solve on the same SPD operator.
The nonnegativity clamp backpropagates as a pass-through where the
pre-clamp solution is positive.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .denoiser import denoise_var, init_denoiser
from .errors import DivergenceError
from .recon import assemble_dc_system, cg_solve, default_lambda


@dataclass
class TrainConfig:
    """Stochastic-gradient training knobs (momentum SGD, halving safeguard)."""

    epochs: int = 40
    batch_size: int = 2
    learning_rate: float = 1e-3
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")


def dc_backward(system, lam, upstream_grad, rel_tol=1e-6, max_iter=20):
    """Gradient of the DC solution with respect to the prior image ``z``.

    Solves ``(H + lam I) v = upstream_grad`` by CG and returns ``lam * v``,
    shaped like the image. ``upstream_grad`` is (2, height, width).
    """
    g = np.asarray(upstream_grad, dtype=np.float64)
    flat = g.reshape(2, -1).T
    if lam == 0:
        return np.zeros_like(g)
    v, _ = cg_solve(system, lam, flat, None, rel_tol=rel_tol, max_iter=max_iter)
    return lam * v.T.reshape(g.shape)


def dc_node(z_var, system, lam, config, x0=None):
    """Tape node for the (pre-clamp) data-consistency solve."""
    rhs = system.rhs_cache + lam * z_var.value.reshape(2, -1).T
    x_flat, _ = cg_solve(
        system, lam, rhs, x0, rel_tol=config.cg_rel_tol, max_iter=config.cg_max_iter
    )
    value = x_flat.T.reshape(2, system.height, system.width)

    def vjp(g):
        return (
            dc_backward(
                system, lam, g, rel_tol=config.cg_rel_tol, max_iter=config.cg_max_iter
            ),
        )

    return ad.Var(value, (z_var,), vjp)


def unrolled_output_var(system, lam, param_vars, n_layers, config):
    """Differentiable unrolled loop; returns the clamped last DC solution.

    Mirrors :func:`dectomo.recon.e2e_decomp` exactly (including the CG warm
    start from the previous clamped iterate) so training and inference share
    one forward pass.
    """
    z = ad.constant(np.zeros((2, system.height, system.width)))
    x_var = None
    x_warm = None
    for k in range(config.k_outer):
        x_cg = dc_node(z, system, lam, config, x0=x_warm)
        x_var = ad.clamp_nonneg(x_cg)
        x_warm = x_var.value.reshape(2, -1).T
        if k < config.k_outer - 1:
            z = denoise_var(param_vars, x_var, n_layers)
    return x_var


def unrolled_loss(y, x_truth, decomposer, params, config, geometry, system=None):
    """Mean-squared reconstruction error as a differentiable scalar.

    Parameters
    ----------
    y : EnergySinogram
    x_truth : MaterialImage
    decomposer : fitted PolynomialDecomposer
    params : DenoiserParams
    config : ReconConfig
    geometry : Geometry
    system : DCSystem, optional
        Pre-assembled system for ``y`` (assembled on the fly otherwise).

    Returns
    -------
    (Var, list of Var)
        The scalar loss node and the parameter nodes (gradients land on the
        latter after ``autodiff.backward``).
    """
    if system is None:
        system = assemble_dc_system(y, decomposer, geometry)
    lam = default_lambda(system) if config.lam is None else config.lam
    param_vars = [ad.Var(t) for t in params.flat()]
    out = unrolled_output_var(system, lam, param_vars, len(params.layers), config)
    loss = ad.mse(out, x_truth.densities)
    return loss, param_vars


def loss_and_grads(y, x_truth, decomposer, params, config, geometry, system=None):
    """Evaluate the unrolled loss and its gradients w.r.t. all weights."""
    loss, param_vars = unrolled_loss(
        y, x_truth, decomposer, params, config, geometry, system=system
    )
    ad.backward(loss)
    grads = [
        pv.grad if pv.grad is not None else np.zeros_like(pv.value) for pv in param_vars
    ]
    return float(loss.value), grads


def train(dataset, decomposer, geometry, recon_config, train_config, init_params=None):
    """Train the shared denoiser weights end to end.

    Parameters
    ----------
    dataset : list of (EnergySinogram, MaterialImage)
    decomposer : fitted PolynomialDecomposer (frozen during training)
    geometry : Geometry
    recon_config : ReconConfig
    train_config : TrainConfig
    init_params : DenoiserParams, optional

    Returns
    -------
    (DenoiserParams, list of (epoch, loss))
        Trained weights and the per-epoch full-batch loss log (epoch 0 is
        the pre-training loss). The learning rate is halved and the epoch
        rolled back whenever the full-batch loss increases, so the logged
        losses are non-increasing.
    """
    if not dataset:
        raise ValueError("dataset must be nonempty")
    params = init_params.copy() if init_params is not None else init_denoiser(train_config.seed)
    systems = [assemble_dc_system(y, decomposer, geometry) for y, _ in dataset]
    lams = [
        default_lambda(s) if recon_config.lam is None else recon_config.lam for s in systems
    ]

    def full_batch_loss(p):
        values = []
        for (y, truth), system, lam in zip(dataset, systems, lams):
            param_vars = [ad.Var(t) for t in p.flat()]
            try:
                out = unrolled_output_var(
                    system, lam, param_vars, len(p.layers), recon_config
                )
            except DivergenceError:
                return np.inf
            values.append(float(np.mean((out.value - truth.densities) ** 2)))
        return float(np.mean(values))

    def sample_grads(p, index):
        y, truth = dataset[index]
        try:
            loss, param_vars = unrolled_loss(
                y, truth, decomposer, p, recon_config, geometry, system=systems[index]
            )
            ad.backward(loss)
        except DivergenceError:
            return np.inf, None
        return float(loss.value), [
            pv.grad if pv.grad is not None else np.zeros_like(pv.value)
            for pv in param_vars
        ]

    rng = np.random.Generator(np.random.Philox(train_config.seed))
    lr = train_config.learning_rate
    velocity = [np.zeros_like(t) for t in params.flat()]
    prev_loss = full_batch_loss(params)
    loss_log = [(0, prev_loss)]
    if not np.isfinite(prev_loss):
        warnings.warn("initial loss is non-finite; returning initial weights")
        return params, loss_log

    for epoch in range(1, train_config.epochs + 1):
        checkpoint = params.copy()
        checkpoint_velocity = [v.copy() for v in velocity]
        order = rng.permutation(len(dataset))
        aborted = False
        for start in range(0, len(dataset), train_config.batch_size):
            batch = order[start : start + train_config.batch_size]
            tensors = params.flat()
            grads = [np.zeros_like(t) for t in tensors]
            finite = True
            for index in batch:
                value, sample_grad = sample_grads(params, int(index))
                if not np.isfinite(value):
                    finite = False
                    break
                for acc, g in zip(grads, sample_grad):
                    acc += g
            if not finite:
                aborted = True
                break
            for i, (t, g) in enumerate(zip(tensors, grads)):
                velocity[i] = train_config.momentum * velocity[i] + g / len(batch)
                t -= lr * velocity[i]
        if aborted:
            warnings.warn("non-finite loss encountered; reverting to last checkpoint")
            params = checkpoint
            velocity = checkpoint_velocity
            loss_log.append((epoch, prev_loss))
            break
        loss = full_batch_loss(params)
        if not np.isfinite(loss) or loss > prev_loss:
            params = checkpoint
            velocity = checkpoint_velocity
            lr *= 0.5
            loss_log.append((epoch, prev_loss))
        else:
            prev_loss = loss
            loss_log.append((epoch, loss))
    return params, loss_log
