"""Shared rendering helpers: the attention colormap and overlay blending."""

from __future__ import annotations

import numpy as np
from PIL import Image

# Blue (low) to red (high) through cyan and yellow. The review UI
# replicates these exact stops; keep both in sync.
COLORMAP_STOPS: list[tuple[float, tuple[int, int, int]]] = [
    (0.0, (0, 0, 255)),
    (1.0 / 3.0, (0, 255, 255)),
    (2.0 / 3.0, (255, 255, 0)),
    (1.0, (255, 0, 0)),
]


def colormap(weights: np.ndarray) -> np.ndarray:
    """Map weights in [0, 1] to RGB uint8 (appends a trailing 3-axis).

    Interpolation runs on 3x-scaled stop positions (0, 1, 2, 3) so the
    segment boundaries are exact binary floats; weight 0.5 maps to the
    symmetric midpoint (128, 255, 128).
    """
    w = np.clip(np.asarray(weights, dtype=np.float64), 0.0, 1.0) * 3.0
    xs = [s * 3.0 for s, _ in COLORMAP_STOPS]
    out = np.empty(w.shape + (3,), dtype=np.uint8)
    for ch in range(3):
        ys = [rgb[ch] for _, rgb in COLORMAP_STOPS]
        out[..., ch] = np.round(np.interp(w, xs, ys)).astype(np.uint8)
    return out


def render_heatmap(weights: np.ndarray, cell_px: int = 16) -> Image.Image:
    """Nearest-neighbor upscaled heatmap image of a weight grid."""
    rgb = colormap(weights)
    img = Image.fromarray(rgb)
    h, w = weights.shape
    return img.resize((w * cell_px, h * cell_px), Image.NEAREST)


def overlay_on_raster(raster: np.ndarray, weights: np.ndarray, alpha: float = 0.45) -> Image.Image:
    """Blend a weight grid over a raster; each weight covers an equal block."""
    h, w = raster.shape[:2]
    gh, gw = weights.shape
    up = np.repeat(np.repeat(weights, h // gh, axis=0), w // gw, axis=1)
    heat = colormap(up).astype(np.float32)
    base = raster[: up.shape[0], : up.shape[1]].astype(np.float32)
    blended = (1 - alpha) * base + alpha * heat
    return Image.fromarray(np.clip(blended, 0, 255).astype(np.uint8))
