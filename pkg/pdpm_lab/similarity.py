"""
Similarity
==========
Normalized Gram matrices of latent and feature batches, the sigmoid-scaled
variants, and the diversity penalty DP built from them.

    raw:     G*(i, j) = a_i . a_j / (|a_i| |a_j|)
    scaled:  G(i, j)  = sigmoid(s * G*(i, j))
    DP       = (1 / m^2) * sum_ij G_f(i, j) / G_z(i, j)

DP sums the full m x m matrix; the diagonal contributes m terms of exactly 1.
It equals 1 when the feature structure matches the latent structure and grows
when dissimilar latents are mapped to similar features.

Also verifies that the product of two normal densities is a scaled normal
density (the analytic fact the sigmoid scaling is motivated by).
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import norm as normal_dist

from .autodiff import Tensor, TensorLike, as_tensor, norm, reduce_mean, sigmoid
from .errors import ContractError, DegenerateInputError, ShapeError

ROW_NORM_FLOOR = 1e-12
DEFAULT_SCALE = 1.0


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """m x m Gram matrix; `s` is the sigmoid scale when `scaled` is set."""
    values: Tensor
    scaled: bool
    s: Optional[float] = None

    @property
    def m(self) -> int:
        return self.values.shape[0]

    def numpy(self) -> np.ndarray:
        return self.values.numpy()


@dataclass(frozen=True)
class GaussianProductResult:
    mu: float
    sigma: float
    scale: float                      # trapezoidal integral of the product
    max_proportionality_error: float  # max |r(x) / r(mu) - 1| on the grid
    scale_closed_form: float          # N(mu_f; mu_g, sqrt(sigma_f^2 + sigma_g^2))


def check_rows(batch: np.ndarray) -> None:
    """Raise DegenerateInputError for the first row with norm <= 1e-12."""
    norms = np.linalg.norm(batch, axis=1)
    bad = np.flatnonzero(norms <= ROW_NORM_FLOOR)
    if bad.size:
        raise DegenerateInputError(int(bad[0]), float(norms[bad[0]]))


def raw_gram(batch: TensorLike) -> SimilarityMatrix:
    """Cosine similarity of every pair of rows. Differentiable w.r.t. the batch."""
    batch = as_tensor(batch)
    if batch.ndim != 2:
        raise ShapeError("raw_gram", batch.shape, (), "expects an m x d batch")
    check_rows(batch.data)

    unit = batch / norm(batch, axis=1, keepdims=True)
    gram = unit @ unit.T
    m = batch.shape[0]
    eye = np.eye(m)
    # exact symmetry, exact unit diagonal (the diagonal's true derivative is zero)
    gram = (gram + gram.T) * 0.5 * (1.0 - eye) + eye
    return SimilarityMatrix(values=gram, scaled=False)


def scaled_gram(batch: TensorLike, s: float = DEFAULT_SCALE) -> SimilarityMatrix:
    """sigmoid(s * cosine); bounded away from 0 so it can sit in a denominator."""
    if not np.isfinite(s):
        raise ContractError(f"sigmoid scale must be finite, got {s}")
    raw = raw_gram(batch)
    return SimilarityMatrix(values=sigmoid(raw.values * float(s)), scaled=True, s=float(s))


def dp_loss(gz: SimilarityMatrix, gf: SimilarityMatrix) -> Tensor:
    """
    Diversity penalty: mean over all m^2 entries of G_f / G_z.

    Args:
        gz: scaled latent similarity (latents are leaves, so usually constant)
        gf: scaled feature similarity, differentiable w.r.t. generator output

    Returns:
        Scalar tensor, to be minimized by the generator.
    """
    if gz.m != gf.m:
        raise ContractError(f"dp_loss: latent batch m={gz.m} but feature batch m={gf.m}")
    if not (gz.scaled and gf.scaled):
        raise ContractError("dp_loss expects sigmoid-scaled similarity matrices")
    if gz.s != gf.s:
        raise ContractError(f"dp_loss: latent scale s={gz.s} differs from feature scale s={gf.s}")
    return reduce_mean(gf.values / gz.values)


def diversity_penalty(latents: TensorLike, features: TensorLike, s: float = DEFAULT_SCALE) -> Tensor:
    """DP for a latent batch and the discriminator features of its fake samples."""
    latents, features = as_tensor(latents), as_tensor(features)
    if latents.shape[0] != features.shape[0]:
        raise ContractError(f"latent rows {latents.shape[0]} != feature rows {features.shape[0]}")
    return dp_loss(scaled_gram(latents, s), scaled_gram(features, s))


# ============================================================
# GAUSSIAN PRODUCT CHECK
# ============================================================

def gaussian_product_params(mu_f: float, sigma_f: float, mu_g: float, sigma_g: float) -> tuple[float, float]:
    """Mean and standard deviation of the normalized product of two normal densities."""
    var_f, var_g = sigma_f ** 2, sigma_g ** 2
    mu = (mu_f * var_g + mu_g * var_f) / (var_f + var_g)
    sigma = float(np.sqrt(var_f * var_g / (var_f + var_g)))
    return float(mu), sigma


def verify_gaussian_product(mu_f: float, sigma_f: float, mu_g: float, sigma_g: float,
                            grid_halfwidth: float = 8.0, grid_points: int = 2001) -> GaussianProductResult:
    """
    Check numerically that N(x; mu_f, sigma_f) * N(x; mu_g, sigma_g) is proportional
    to N(x; mu, sigma).

    The grid spans mu +/- grid_halfwidth * sigma. The ratio is evaluated in log
    space so far-apart means do not underflow.
    """
    if not (sigma_f > 0 and sigma_g > 0):
        raise ContractError(f"standard deviations must be positive, got {sigma_f}, {sigma_g}")
    if grid_points < 1001:
        raise ContractError(f"grid_points must be >= 1001, got {grid_points}")
    if not grid_halfwidth > 0:
        raise ContractError(f"grid_halfwidth must be positive, got {grid_halfwidth}")

    mu, sigma = gaussian_product_params(mu_f, sigma_f, mu_g, sigma_g)
    x = np.linspace(mu - grid_halfwidth * sigma, mu + grid_halfwidth * sigma, grid_points)

    log_product = normal_dist.logpdf(x, mu_f, sigma_f) + normal_dist.logpdf(x, mu_g, sigma_g)
    log_ratio = log_product - normal_dist.logpdf(x, mu, sigma)
    reference = log_product[grid_points // 2] - normal_dist.logpdf(x[grid_points // 2], mu, sigma)
    max_error = float(np.max(np.abs(np.expm1(log_ratio - reference))))

    scale = float(trapezoid(np.exp(log_product), x))
    closed_form = float(normal_dist.pdf(mu_f, mu_g, np.sqrt(sigma_f ** 2 + sigma_g ** 2)))
    return GaussianProductResult(mu=mu, sigma=sigma, scale=scale,
                                 max_proportionality_error=max_error,
                                 scale_closed_form=closed_form)
