"""
Metrics
=======
Evaluation of a trained generator on a known mixture:

- mode coverage: a sample is high quality if it lies within 3 std of its
  nearest center; a mode is captured if it is the nearest center of at least
  one high-quality sample
- Frechet distance between Gaussians fitted to two sample clouds (raw
  coordinates play the role of features)
- collapse probe: Adam on a second latent z2 so that G(z2) matches G(z1);
  the scaled cosine similarity of converged (z1, z2) pairs measures how
  different latents can be while producing the same output. Near-duplicate
  pairs start from the pool latent with the closest output
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg, spatial

from .autodiff import Tensor, backward, reduce_mean, reduce_sum, square
from .errors import ContractError, InsufficientDataError, NumericError
from .models import MlpParams, MlpSpec, discriminator_forward, generator_forward
from .optim import AdamState, adam_step
from .seeding import standard_normal
from .similarity import DEFAULT_SCALE, scaled_gram
from .synthetic_data import MixtureSpec, PriorSpec, sample_components, sample_latent

logger = logging.getLogger(__name__)

HQ_STDS = 3.0
PROBE_STEPS = 2000
PROBE_LR = 1e-2
PROBE_MSE_THRESHOLD = 1e-4
PROBE_CANDIDATES = 4096
MIN_CONVERGED_PAIRS = 10
EVAL_SAMPLES = 10_000


# ============================================================
# REPORT TYPES
# ============================================================

@dataclass
class CoverageResult:
    modes_captured: int
    hq_fraction: float
    hq_count: int
    per_mode_counts: list[int]      # high-quality samples per center
    assignments: np.ndarray         # nearest center per sample
    high_quality: np.ndarray        # bool per sample


@dataclass
class ProbeResult:
    z1: np.ndarray
    z2: np.ndarray
    mse: float
    latent_similarity: float
    converged: bool


@dataclass
class NearDuplicateStat:
    mean: float
    count: int                      # converged pairs used
    n_pairs: int                    # pairs probed
    histogram_edges: list[float]
    histogram_counts: list[int]
    similarities: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MetricsReport:
    n_samples: int
    modes_captured: int
    n_modes: int
    hq_fraction: float
    frechet: float
    mean_latent_similarity_of_near_duplicates: Optional[float]
    per_mode_counts: list[int]
    near_duplicate_pairs: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        return cls(**data)


# ============================================================
# MODE COVERAGE
# ============================================================

def nearest_centers(samples: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(index of nearest center, distance to it) for every sample."""
    diff = samples[:, None, :] - centers[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    idx = np.argmin(dist, axis=1)
    return idx, dist[np.arange(len(samples)), idx]


def mode_coverage(samples, spec: MixtureSpec) -> CoverageResult:
    """Modes captured and high-quality fraction of a sample cloud."""
    samples = np.asarray(samples.data if isinstance(samples, Tensor) else samples, dtype=np.float64)
    samples = samples.reshape(-1, 2)
    if len(samples) < 1:
        raise ContractError("mode_coverage needs at least one sample")
    idx, dist = nearest_centers(samples, spec.centers)
    high_quality = dist <= HQ_STDS * spec.std
    counts = np.bincount(idx[high_quality], minlength=spec.n_modes)
    hq_count = int(high_quality.sum())
    return CoverageResult(
        modes_captured=int(np.count_nonzero(counts)),
        hq_fraction=hq_count / len(samples),
        hq_count=hq_count,
        per_mode_counts=[int(c) for c in counts],
        assignments=idx,
        high_quality=high_quality,
    )


# ============================================================
# FRECHET DISTANCE
# ============================================================

def _psd_sqrt(matrix: np.ndarray, what: str) -> np.ndarray:
    """Square root of a symmetric PSD matrix by eigendecomposition, clamping tiny negatives."""
    sym = 0.5 * (matrix + matrix.T)
    eigvals, eigvecs = linalg.eigh(sym)
    tol = 1e-10 * max(1.0, float(np.max(np.abs(eigvals))))
    if eigvals.min() < -tol:
        raise NumericError(f"{what} is not positive semi-definite (min eigenvalue {eigvals.min():.3e})")
    root = np.sqrt(np.clip(eigvals, 0.0, None))
    return (eigvecs * root) @ eigvecs.T


def frechet_distance(samples_a, samples_b) -> float:
    """
    |mu_a - mu_b|^2 + Tr(C_a + C_b - 2 (C_a^1/2 C_b C_a^1/2)^1/2).

    Works for any feature dimension; sample covariances use ddof=1.
    """
    a = np.asarray(samples_a.data if isinstance(samples_a, Tensor) else samples_a, dtype=np.float64)
    b = np.asarray(samples_b.data if isinstance(samples_b, Tensor) else samples_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ContractError(f"frechet_distance needs (n, d) arrays of equal d, got {a.shape} and {b.shape}")
    if len(a) < 3 or len(b) < 3:
        raise ContractError("frechet_distance needs at least 3 samples per side")

    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(a, rowvar=False))
    cov_b = np.atleast_2d(np.cov(b, rowvar=False))
    root_a = _psd_sqrt(cov_a, "covariance of the first sample set")
    _psd_sqrt(cov_b, "covariance of the second sample set")
    cross = _psd_sqrt(root_a @ cov_b @ root_a, "covariance product")

    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(cross))
    return max(value, 0.0)


# ============================================================
# COLLAPSE PROBE
# ============================================================

def _scaled_cosine(z1: np.ndarray, z2: np.ndarray, s: float) -> np.ndarray:
    """Row-wise sigmoid(s * cos(z1_i, z2_i)), taken from the 2 x 2 scaled Gram of each pair."""
    return np.array([scaled_gram(np.stack([a, b]), s).numpy()[0, 1] for a, b in zip(z1, z2)])


def probe_batch(gen_params: MlpParams, spec: MlpSpec, z1: np.ndarray, z2_init: np.ndarray,
                steps: int = PROBE_STEPS, lr: float = PROBE_LR,
                mse_threshold: float = PROBE_MSE_THRESHOLD, s: float = DEFAULT_SCALE) -> list[ProbeResult]:
    """
    Independent probes run as one batch: the loss is the SUM of per-row MSEs,
    so each row's gradient (and its elementwise Adam update) only sees its own pair.
    """
    z1 = np.atleast_2d(np.asarray(z1, dtype=np.float64))
    z2 = np.atleast_2d(np.array(z2_init, dtype=np.float64))
    if z1.shape != z2.shape or z1.shape[1] != spec.input_dim:
        raise ContractError(f"probe latents must be (n, {spec.input_dim}), got {z1.shape} and {z2.shape}")
    target = generator_forward(gen_params, spec, z1)
    state = AdamState.zeros_like([z2])

    def row_mse(z: Tensor) -> Tensor:
        return reduce_mean(square(generator_forward(gen_params, spec, z) - target), axis=1)

    try:
        for _ in range(steps):
            leaf = Tensor(z2, requires_grad=True)
            (grad,) = backward(reduce_sum(row_mse(leaf)), [leaf])
            (z2,), state = adam_step([z2], [grad.data], state, lr=lr, beta1=0.9, beta2=0.999, eps=1e-8)
        mse = row_mse(Tensor(z2)).data
    except NumericError as exc:
        raise NumericError(f"collapse probe diverged after {state.t} Adam steps "
                           f"(lr={lr}, |z2|max={np.abs(z2).max():.3e}): {exc}") from exc

    similarity = _scaled_cosine(z1, z2, s)
    return [ProbeResult(z1=z1[i].copy(), z2=z2[i].copy(), mse=float(mse[i]),
                        latent_similarity=float(similarity[i]), converged=bool(mse[i] < mse_threshold))
            for i in range(len(z1))]


def collapse_probe(gen_params: MlpParams, spec: MlpSpec, z1: np.ndarray, rng: np.random.Generator,
                   steps: int = PROBE_STEPS, lr: float = PROBE_LR,
                   mse_threshold: float = PROBE_MSE_THRESHOLD, s: float = DEFAULT_SCALE,
                   z2_init: Optional[np.ndarray] = None) -> ProbeResult:
    """Search for z2 with G(z2) close to G(z1), starting from a random z2 (or z2_init)."""
    z1 = np.asarray(z1, dtype=np.float64).reshape(1, -1)
    if z2_init is None:
        z2_init = standard_normal(rng, z1.shape)
    return probe_batch(gen_params, spec, z1, np.reshape(z2_init, z1.shape),
                       steps, lr, mse_threshold, s)[0]


def _nearest_output_starts(gen_params: MlpParams, spec: MlpSpec, z1: np.ndarray, candidates: int,
                           rng: np.random.Generator) -> np.ndarray:
    """For each z1, the pool latent whose output lies closest to G(z1)."""
    pool = sample_latent(PriorSpec(d=spec.input_dim), candidates, rng).data
    pool_out = generator_forward(gen_params, spec, pool).numpy()
    _, index = spatial.cKDTree(pool_out).query(generator_forward(gen_params, spec, z1).numpy(), k=1)
    return pool[np.asarray(index, dtype=int)]


def near_duplicate_similarity_stat(gen_params: MlpParams, spec: MlpSpec, n_pairs: int,
                                   mse_threshold: float, rng: np.random.Generator,
                                   steps: int = PROBE_STEPS, lr: float = PROBE_LR,
                                   s: float = DEFAULT_SCALE, bins: int = 20,
                                   candidates: int = PROBE_CANDIDATES) -> NearDuplicateStat:
    """
    Mean scaled latent similarity over probe pairs whose outputs converged
    (mse < mse_threshold). Fewer than 10 converged pairs is an error.

    With candidates > 0, each z2 starts at the latent of a prior pool whose
    output is nearest G(z1), so the pairs are near-duplicate fake samples
    the generator actually produces and the probe only polishes them. With
    candidates == 0, z2 starts from a fresh prior draw.
    """
    if n_pairs < 1:
        raise InsufficientDataError(0, MIN_CONVERGED_PAIRS)
    if candidates < 0:
        raise ContractError(f"candidates must be >= 0, got {candidates}")
    prior = PriorSpec(d=spec.input_dim)
    z1 = sample_latent(prior, n_pairs, rng).data
    if candidates:
        z2 = _nearest_output_starts(gen_params, spec, z1, candidates, rng)
    else:
        z2 = sample_latent(prior, n_pairs, rng).data
    results = probe_batch(gen_params, spec, z1, z2, steps, lr, mse_threshold, s)
    sims = [r.latent_similarity for r in results if r.converged]
    logger.info("Collapse probe: %d/%d pairs converged (mse < %g)", len(sims), n_pairs, mse_threshold)
    if len(sims) < MIN_CONVERGED_PAIRS:
        raise InsufficientDataError(len(sims), MIN_CONVERGED_PAIRS)
    counts, edges = np.histogram(sims, bins=bins, range=(0.0, 1.0))
    return NearDuplicateStat(mean=float(np.mean(sims)), count=len(sims), n_pairs=n_pairs,
                             histogram_edges=[float(e) for e in edges],
                             histogram_counts=[int(c) for c in counts],
                             similarities=[float(v) for v in sims])


# ============================================================
# FEATURE SIMILARITY BY MODE / INTERPOLATION
# ============================================================

def mode_similarity_matrix(disc_params: MlpParams, disc_spec: MlpSpec, mixture: MixtureSpec,
                           n_per_mode: int, rng: np.random.Generator,
                           s: float = DEFAULT_SCALE) -> np.ndarray:
    """
    C x C matrix: mean scaled feature similarity between real samples of mode a
    and mode b, using the discriminator's feature layer. A useful feature space
    has a larger diagonal than off-diagonal.
    """
    if n_per_mode < 2:
        raise ContractError("mode_similarity_matrix needs at least 2 samples per mode")
    noise = standard_normal(rng, (mixture.n_modes, n_per_mode, 2)) * mixture.std
    points = (mixture.centers[:, None, :] + noise).reshape(-1, 2)
    _, features = discriminator_forward(disc_params, disc_spec, points)
    gram = scaled_gram(features, s).numpy()

    c = mixture.n_modes
    blocks = gram.reshape(c, n_per_mode, c, n_per_mode)
    result = np.empty((c, c))
    off_diag = ~np.eye(n_per_mode, dtype=bool)
    for a in range(c):
        for b in range(c):
            block = blocks[a, :, b, :]
            result[a, b] = block[off_diag].mean() if a == b else block.mean()
    return result


def latent_interpolation(gen_params: MlpParams, spec: MlpSpec, z_a: np.ndarray, z_b: np.ndarray,
                         n_points: int = 50) -> np.ndarray:
    """G((1 - t) z_a + t z_b) for t evenly spaced in [0, 1]; shape (n_points, output_dim)."""
    t = np.linspace(0.0, 1.0, n_points)[:, None]
    z = (1.0 - t) * np.asarray(z_a)[None, :] + t * np.asarray(z_b)[None, :]
    return generator_forward(gen_params, spec, z).numpy()


# ============================================================
# FULL EVALUATION
# ============================================================

@dataclass
class MetricSettings:
    n_eval_samples: int = EVAL_SAMPLES
    run_probe: bool = True
    probe_pairs: int = 200
    probe_steps: int = PROBE_STEPS
    probe_lr: float = PROBE_LR
    mse_threshold: float = PROBE_MSE_THRESHOLD
    probe_candidates: int = PROBE_CANDIDATES
    histogram_bins: int = 20

    def problems(self, prefix: str = "metrics") -> list[tuple[str, str]]:
        found = []
        if self.n_eval_samples < 3:
            found.append((f"{prefix}.n_eval_samples", "must be >= 3"))
        if self.probe_pairs < 0:
            found.append((f"{prefix}.probe_pairs", "must be >= 0"))
        if self.probe_steps < 0:
            found.append((f"{prefix}.probe_steps", "must be >= 0"))
        if not self.probe_lr > 0:
            found.append((f"{prefix}.probe_lr", "must be > 0"))
        if not self.mse_threshold > 0:
            found.append((f"{prefix}.mse_threshold", "must be > 0"))
        if self.probe_candidates < 0:
            found.append((f"{prefix}.probe_candidates", "must be >= 0"))
        if self.histogram_bins < 1:
            found.append((f"{prefix}.histogram_bins", "must be >= 1"))
        return found


def generate_samples(gen_params: MlpParams, spec: MlpSpec, n: int, rng: np.random.Generator,
                     chunk: int = 4096) -> np.ndarray:
    prior = PriorSpec(d=spec.input_dim)
    parts = []
    for start in range(0, n, chunk):
        z = sample_latent(prior, min(chunk, n - start), rng)
        parts.append(generator_forward(gen_params, spec, z).numpy())
    return np.concatenate(parts, axis=0) if parts else np.zeros((0, spec.output_dim))


def evaluate_generator(gen_params: MlpParams, spec: MlpSpec, mixture: MixtureSpec,
                       settings: MetricSettings, rng: np.random.Generator,
                       probe_rng: Optional[np.random.Generator] = None,
                       s: float = DEFAULT_SCALE) -> tuple[MetricsReport, np.ndarray]:
    """Full report plus the generated samples it was computed on."""
    fake = generate_samples(gen_params, spec, settings.n_eval_samples, rng)
    real, _ = sample_components(mixture, settings.n_eval_samples, rng)
    coverage = mode_coverage(fake, mixture)

    similarity, pairs = None, 0
    if settings.run_probe and settings.probe_pairs > 0:
        try:
            stat = near_duplicate_similarity_stat(
                gen_params, spec, settings.probe_pairs, settings.mse_threshold,
                probe_rng if probe_rng is not None else rng,
                steps=settings.probe_steps, lr=settings.probe_lr, s=s, bins=settings.histogram_bins,
                candidates=settings.probe_candidates)
            similarity, pairs = stat.mean, stat.count
        except InsufficientDataError as exc:
            logger.warning("Near-duplicate statistic unavailable: %s", exc)

    report = MetricsReport(
        n_samples=len(fake),
        modes_captured=coverage.modes_captured,
        n_modes=mixture.n_modes,
        hq_fraction=coverage.hq_fraction,
        frechet=frechet_distance(fake, real),
        mean_latent_similarity_of_near_duplicates=similarity,
        per_mode_counts=coverage.per_mode_counts,
        near_duplicate_pairs=pairs,
    )
    return report, fake


def summarize(values: Sequence[float]) -> dict:
    """mean / std / median of a list, ignoring None entries."""
    clean = np.array([v for v in values if v is not None], dtype=np.float64)
    if clean.size == 0:
        return {"mean": None, "std": None, "median": None, "n": 0}
    return {"mean": float(clean.mean()), "std": float(clean.std()),
            "median": float(np.median(clean)), "n": int(clean.size)}
