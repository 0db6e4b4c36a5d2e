"""
Synthetic Data
==============
2D Gaussian mixtures (8-mode ring, 25-mode grid) used as the real
distribution, plus the standard-normal latent prior.

Usage:
    ring = make_ring(radius=1.0, std=0.01)
    x = sample_real(ring, 512, make_rng(0, "real_data"))
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .autodiff import Tensor
from .errors import ContractError
from .seeding import standard_normal

# ============================================================
# DEFAULTS
# ============================================================

RING_MODES = 8
RING_RADIUS = 1.0
RING_STD = 0.01
GRID_SIDE = 5
GRID_HALFWIDTH = 4.0
GRID_STD = 0.05

MIXTURE_NAMES = ("ring8", "grid25", "custom")


@dataclass(frozen=True, eq=False)
class MixtureSpec:
    """Equal-weight isotropic 2D Gaussian mixture."""
    centers: np.ndarray  # (C, 2)
    std: float
    name: str = "custom"

    def __post_init__(self):
        centers = np.array(self.centers, dtype=np.float64).reshape(-1, 2)
        object.__setattr__(self, "centers", centers)
        if len(centers) == 0:
            raise ContractError("a mixture needs at least one center")
        if not self.std > 0:
            raise ContractError(f"mixture std must be positive, got {self.std}")
        if self.name not in MIXTURE_NAMES:
            raise ContractError(f"mixture name must be one of {MIXTURE_NAMES}, got {self.name!r}")

    @property
    def n_modes(self) -> int:
        return len(self.centers)

    def to_dict(self) -> dict:
        return {"name": self.name, "std": self.std, "centers": self.centers.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "MixtureSpec":
        return cls(centers=np.array(data["centers"]), std=float(data["std"]),
                   name=data.get("name", "custom"))


@dataclass(frozen=True)
class PriorSpec:
    """Standard-normal latent prior p_z of dimension d."""
    d: int
    distribution: str = field(default="standard_normal")

    def __post_init__(self):
        if self.d < 1:
            raise ContractError(f"latent dimension must be >= 1, got {self.d}")


# ============================================================
# MIXTURES
# ============================================================

def make_ring(radius: float = RING_RADIUS, std: float = RING_STD) -> MixtureSpec:
    """Eight modes equally spaced on a circle, center j at angle 2*pi*j/8."""
    if not (radius > 0 and std > 0):
        raise ContractError(f"ring radius and std must be positive, got {radius}, {std}")
    angles = 2.0 * np.pi * np.arange(RING_MODES) / RING_MODES
    centers = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return MixtureSpec(centers=centers, std=std, name="ring8")


def make_grid(halfwidth: float = GRID_HALFWIDTH, std: float = GRID_STD) -> MixtureSpec:
    """25 modes on the lattice {-h, -h/2, 0, h/2, h}^2."""
    if not (halfwidth > 0 and std > 0):
        raise ContractError(f"grid halfwidth and std must be positive, got {halfwidth}, {std}")
    ticks = np.linspace(-halfwidth, halfwidth, GRID_SIDE)
    xs, ys = np.meshgrid(ticks, ticks, indexing="ij")
    centers = np.stack([xs.ravel(), ys.ravel()], axis=1)
    return MixtureSpec(centers=centers, std=std, name="grid25")


# ============================================================
# SAMPLING
# ============================================================

def sample_components(spec: MixtureSpec, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw n points and return (points (n, 2), component index (n,))."""
    components = rng.integers(0, spec.n_modes, size=n)
    noise = standard_normal(rng, (n, 2)) * spec.std
    return spec.centers[components] + noise, components


def sample_real(spec: MixtureSpec, n: int, rng: np.random.Generator) -> Tensor:
    """n samples from the mixture: uniform component, then isotropic N(0, std^2) noise."""
    points, _ = sample_components(spec, n, rng)
    return Tensor(points)


def sample_latent(prior: PriorSpec, m: int, rng: np.random.Generator) -> Tensor:
    """
    m x d standard-normal latent batch.

    Rows with norm <= 1e-12 cannot be compared by cosine similarity; they are
    redrawn (probability zero in practice, but the LatentBatch invariant holds).
    """
    z = standard_normal(rng, (m, prior.d))
    while True:
        bad = np.linalg.norm(z, axis=1) <= 1e-12
        if not bad.any():
            return Tensor(z)
        z[bad] = standard_normal(rng, (int(bad.sum()), prior.d))


def dump_dataset(spec: MixtureSpec, n: int, rng: np.random.Generator, path: Path) -> Path:
    """Write n samples as CSV `x,y,component_index`."""
    points, components = sample_components(spec, n, rng)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x", "y", "component_index"])
        for (x, y), c in zip(points, components):
            writer.writerow([repr(float(x)), repr(float(y)), int(c)])
    return path


def mixture_from_name(name: str, radius: Optional[float] = None, halfwidth: Optional[float] = None,
                      std: Optional[float] = None) -> MixtureSpec:
    """Build ring8 / grid25 with optional overrides of the default geometry."""
    if name == "ring8":
        return make_ring(radius if radius is not None else RING_RADIUS,
                         std if std is not None else RING_STD)
    if name == "grid25":
        return make_grid(halfwidth if halfwidth is not None else GRID_HALFWIDTH,
                         std if std is not None else GRID_STD)
    raise ContractError(f"no built-in mixture named {name!r}")
