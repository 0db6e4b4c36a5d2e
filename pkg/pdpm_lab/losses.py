"""
Losses
======
Adversarial objectives, the WGAN-GP gradient penalty and the mode-seeking
regularizer. Every function returns a scalar tensor to be MINIMIZED.

Sign conventions:
    wgan_gp  L_D = mean D(G(z)) - mean D(x) + gp_coefficient * GP
             L_G = -mean D(G(z)) + lambda * DP - lambda_ms * MS
    vanilla  L_D = BCE(sigmoid(D(x)), 1) + BCE(sigmoid(D(G(z))), 0)
             L_G = BCE(sigmoid(D(G(z))), 1) + lambda * DP - lambda_ms * MS

Maximizing E D(G(z)) - lambda * E DP(z) is implemented as minimizing its
negation. The discriminator loss does not depend on lambda.
"""

from typing import Optional

import numpy as np

from .autodiff import (Tensor, TensorLike, absolute, as_tensor, backward, norm,
                       reduce_mean, reduce_sum, softplus, square)
from .errors import ContractError, ShapeError
from .models import MlpSpec, ParamsLike, discriminator_forward

OBJECTIVES = ("vanilla", "wgan_gp")
GP_NORM_EPS = 1e-12
MS_EPS = 1e-8


def _check_objective(objective: str) -> None:
    if objective not in OBJECTIVES:
        raise ContractError(f"objective must be one of {OBJECTIVES}, got {objective!r}")


def d_loss(scores_fake: TensorLike, scores_real: TensorLike, objective: str = "wgan_gp",
           gp_term: Optional[Tensor] = None, gp_coefficient: float = 10.0) -> Tensor:
    """Discriminator loss; the same function is used with and without the diversity penalty."""
    _check_objective(objective)
    scores_fake, scores_real = as_tensor(scores_fake), as_tensor(scores_real)
    if scores_fake.shape != scores_real.shape:
        raise ShapeError("d_loss", scores_fake.shape, scores_real.shape)

    if objective == "vanilla":
        return reduce_mean(softplus(-scores_real)) + reduce_mean(softplus(scores_fake))

    loss = reduce_mean(scores_fake) - reduce_mean(scores_real)
    if gp_term is not None:
        loss = loss + gp_term * gp_coefficient
    return loss


def g_loss(scores_fake: TensorLike, dp_value: Optional[Tensor] = None, ms_value: Optional[Tensor] = None,
           objective: str = "wgan_gp", lam: float = 0.0, lam_ms: float = 0.0) -> Tensor:
    """Generator loss: adversarial term + lam * DP - lam_ms * MS (terms skipped when None)."""
    _check_objective(objective)
    scores_fake = as_tensor(scores_fake)
    if objective == "vanilla":
        loss = reduce_mean(softplus(-scores_fake))  # non-saturating: BCE toward label 1
    else:
        loss = -reduce_mean(scores_fake)
    if dp_value is not None:
        loss = loss + dp_value * float(lam)
    if ms_value is not None:
        loss = loss - ms_value * float(lam_ms)
    return loss


def interpolate(x_real: np.ndarray, x_fake: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """x_hat = u * x_real + (1 - u) * x_fake with one u ~ U(0, 1) per sample."""
    u = rng.random((x_real.shape[0], 1))
    return u * x_real + (1.0 - u) * x_fake


def gradient_penalty(d_params: ParamsLike, spec: MlpSpec, x_real: TensorLike, x_fake: TensorLike,
                     rng: np.random.Generator) -> Tensor:
    """
    mean over samples of (|grad_x D(x_hat)|_2 - 1)^2.

    Real and fake batches enter as constants; the result is differentiable
    with respect to the discriminator parameters (second-order graph).
    """
    x_real, x_fake = as_tensor(x_real), as_tensor(x_fake)
    if x_real.shape != x_fake.shape:
        raise ShapeError("gradient_penalty", x_real.shape, x_fake.shape)
    x_hat = Tensor(interpolate(x_real.data, x_fake.data, rng), requires_grad=True)
    return penalty_at(d_params, spec, x_hat)


def penalty_at(d_params: ParamsLike, spec: MlpSpec, x_hat: Tensor) -> Tensor:
    """Gradient penalty at fixed interpolates (x_hat must require grad)."""
    scores, _ = discriminator_forward(d_params, spec, x_hat)
    (grad_x,) = backward(reduce_sum(scores), [x_hat], create_graph=True)
    slopes = norm(grad_x, axis=1, eps=GP_NORM_EPS)
    return reduce_mean(square(slopes - 1.0))


def ms_regularizer(z: TensorLike, g_of_z: TensorLike) -> Tensor:
    """
    Mode-seeking term (to be maximized): over disjoint consecutive pairs (2i, 2i+1),
    mean of |G(z_a) - G(z_b)|_1 / (|z_a - z_b|_1 + 1e-8).
    """
    z, g_of_z = as_tensor(z), as_tensor(g_of_z)
    m = z.shape[0]
    if m < 2:
        raise ContractError(f"mode-seeking term needs m >= 2, got {m}")
    if g_of_z.shape[0] != m:
        raise ShapeError("ms_regularizer", z.shape, g_of_z.shape, "row counts differ")
    stop = 2 * (m // 2)
    out_dist = reduce_sum(absolute(g_of_z[0:stop:2] - g_of_z[1:stop:2]), axis=1)
    latent_dist = reduce_sum(absolute(z[0:stop:2] - z[1:stop:2]), axis=1) + MS_EPS
    return reduce_mean(out_dist / latent_dist)
