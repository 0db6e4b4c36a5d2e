"""
Static SVG figures: generated samples over the mixture, loss curves and the
mode-by-mode feature similarity heatmap.

Rendering is a pure function of its inputs: fixed figure size and dpi, no
date metadata and a fixed SVG hash salt, so equal inputs give equal bytes.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Circle  # noqa: E402

from .synthetic_data import MixtureSpec  # noqa: E402
from .training import StepRecord  # noqa: E402

logger = logging.getLogger(__name__)

DPI = 72                 # 1 SVG user unit == 1 pixel == 1 point
FIGSIZE = (6.0, 6.0)
CIRCLE_STDS = 3.0
SVG_SALT = "pdpm-lab"

plt.rcParams["svg.hashsalt"] = SVG_SALT


@dataclass
class ScatterLayout:
    """Data -> SVG coordinate scale of a scatter plot (equal aspect, so one factor)."""
    units_per_data: float
    circle_radius_units: float


def _save(fig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context({"svg.hashsalt": SVG_SALT}):
        fig.savefig(path, format="svg", dpi=DPI, metadata={"Date": None})
    plt.close(fig)
    logger.debug("Wrote %s", path)
    return path


def _bounds(mixture: MixtureSpec) -> tuple[float, float, float, float]:
    pad = CIRCLE_STDS * mixture.std * 2.0
    lo = mixture.centers.min(axis=0) - pad
    hi = mixture.centers.max(axis=0) + pad
    span = max(hi - lo) * 0.1
    lo, hi = lo - span, hi + span
    # square window so the equal aspect fills the axes exactly
    center = (lo + hi) / 2.0
    half = max(hi - lo) / 2.0
    return center[0] - half, center[0] + half, center[1] - half, center[1] + half


def scatter_svg(mixture: MixtureSpec, generated: np.ndarray, path: Union[str, Path],
                real: Optional[np.ndarray] = None, path_points: Optional[np.ndarray] = None,
                title: str = "") -> ScatterLayout:
    """
    Generated samples over the mixture: real cloud (optional), centers, a
    3-std circle per center (SVG group id `mode-circle-<j>`) and an optional
    latent interpolation path.
    """
    generated = np.asarray(generated, dtype=np.float64).reshape(-1, 2)
    fig, ax = plt.subplots(figsize=FIGSIZE, dpi=DPI)
    x0, x1, y0, y1 = _bounds(mixture)
    ax.set_xlim(x0, x1)
    ax.set_ylim(y0, y1)
    ax.set_aspect("equal", adjustable="box")

    if real is not None and len(real):
        ax.scatter(real[:, 0], real[:, 1], s=2, c="#9e9e9e", alpha=0.4, label="real", linewidths=0)
    if len(generated):
        ax.scatter(generated[:, 0], generated[:, 1], s=3, c="#1f77b4", alpha=0.6, label="generated",
                   linewidths=0)
    for j, center in enumerate(mixture.centers):
        circle = Circle(tuple(center), CIRCLE_STDS * mixture.std, fill=False, ec="#d62728", lw=0.8)
        circle.set_gid(f"mode-circle-{j}")
        ax.add_patch(circle)
    ax.scatter(mixture.centers[:, 0], mixture.centers[:, 1], marker="x", s=20, c="#d62728", label="centers")
    if path_points is not None and len(path_points):
        ax.plot(path_points[:, 0], path_points[:, 1], "-", c="#2ca02c", lw=1.0, label="interpolation")

    if title:
        ax.set_title(title)
    ax.legend(loc="upper right", fontsize=7)

    fig.canvas.draw()
    (px0, _), (px1, _) = ax.transData.transform([(0.0, 0.0), (1.0, 0.0)])
    units = float(px1 - px0)
    layout = ScatterLayout(units_per_data=units, circle_radius_units=CIRCLE_STDS * mixture.std * units)
    _save(fig, path)
    return layout


def loss_curves_svg(history: Sequence[StepRecord], path: Union[str, Path], title: str = "") -> Path:
    """L_G, L_D and DP against the generator step."""
    fig, ax = plt.subplots(figsize=(8.0, 4.5), dpi=DPI)
    steps = [r.step for r in history]
    ax.plot(steps, [r.L_G for r in history], lw=0.8, label="L_G")
    ax.plot(steps, [r.L_D for r in history], lw=0.8, label="L_D")
    ax.plot(steps, [r.DP for r in history], lw=0.8, label="DP")
    ax.set_xlabel("generator step")
    ax.set_ylabel("loss")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper right", fontsize=8)
    return _save(fig, path)


def similarity_heatmap_svg(matrix: np.ndarray, path: Union[str, Path], title: str = "") -> Path:
    """C x C mode-by-mode similarity matrix."""
    matrix = np.asarray(matrix, dtype=np.float64)
    fig, ax = plt.subplots(figsize=FIGSIZE, dpi=DPI)
    mesh = ax.pcolormesh(matrix, cmap="viridis", vmin=0.0, vmax=1.0)
    ax.invert_yaxis()
    ax.set_aspect("equal")
    ax.set_xlabel("mode")
    ax.set_ylabel("mode")
    fig.colorbar(mesh, ax=ax)
    if title:
        ax.set_title(title)
    return _save(fig, path)
