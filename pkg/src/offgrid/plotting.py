"""Figure and image file output."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from PIL import Image  # noqa: E402

from .beamform import PixelGrid  # noqa: E402


def to_gray8(db_image, dynamic_range_db: float = 60.0) -> np.ndarray:
    """Map ``[-dynamic_range_db, 0]`` dB linearly onto 0..255."""
    db = np.clip(np.asarray(db_image, dtype=float), -dynamic_range_db, 0.0)
    return np.round((db + dynamic_range_db) / dynamic_range_db * 255.0).astype(np.uint8)


def write_png(path, db_image, dynamic_range_db: float = 60.0) -> None:
    Image.fromarray(to_gray8(db_image, dynamic_range_db), mode="L").save(path)


def _mm(extent):
    return [v * 1e3 for v in extent]


def bmode_figure(path, db_image, grid: PixelGrid, title: str = "", dynamic_range_db: float = 60.0,
                 masks=(), points=None) -> None:
    """B-mode style figure in mm, optional region outlines and scatterer markers."""
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    im = ax.imshow(db_image, cmap="gray", vmin=-dynamic_range_db, vmax=0, extent=_mm(grid.extent()),
                   aspect="equal")
    for k, m in enumerate(masks):
        ax.contour(grid.x * 1e3, grid.z * 1e3, np.asarray(m, float), levels=[0.5],
                   colors=["tab:orange", "tab:cyan"][k % 2], linewidths=1)
    if points is not None:
        ax.plot(points[0] * 1e3, points[1] * 1e3, "r+", ms=5)
    ax.set_xlabel("x [mm]")
    ax.set_ylabel("z [mm]")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, label="dB", shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def loss_figure(path, loss_trace, heldout_trace=None) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.semilogy(np.arange(1, len(loss_trace) + 1), loss_trace, lw=0.6, label="batch")
    if heldout_trace is not None and len(heldout_trace):
        h = np.asarray(heldout_trace)
        ax.semilogy(h[:, 0], h[:, 1], "o-", ms=2, label="held-out")
    ax.set_xlabel("iteration")
    ax.set_ylabel("RF MSE")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def ablation_figure(path, rows) -> None:
    """Horizontal bars of MSE per ablated feature; `rows` is ``[(label, mse), ...]``."""
    labels = [r[0] for r in rows]
    vals = [r[1] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.barh(range(len(rows)), vals, color="tab:blue")
    ax.set_yticks(range(len(rows)), labels)
    ax.invert_yaxis()
    ax.set_xscale("log")
    ax.set_xlabel("RF MSE")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
