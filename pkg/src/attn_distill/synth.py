"""Procedural map-like rasters with exact ground-truth masks.

Wood regions are textured with clusters of small circles, settlement
regions with regular dot/hatch blocks, on a paper-colored background
with light line noise. Masks are the rasterized polygons themselves,
so they are exact by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFilter

from .core import GroundTruthMask, Rng, ValidationError, normalize_class_name

PAPER_COLOR = (235, 228, 205)
WOOD_COLOR = (60, 90, 50)
SETTLEMENT_COLOR = (150, 40, 30)
LINE_COLOR = (120, 115, 100)


@dataclass(frozen=True)
class TextureConfig:
    """Knobs controlling how separable the synthetic textures are.

    Density, size and tint vary smoothly across each region (real map
    textures are never uniform); heterogeneity also keeps the encoder
    tokens of one region mutually distinguishable.
    """

    wood_circle_radius: int = 3
    wood_circle_spacing: int = 8  # mean distance between circle centers
    settlement_dot_size: int = 4
    settlement_dot_spacing: int = 12
    noise_lines_per_megapixel: float = 30.0
    pixel_noise: float = 6.0  # std of additive uint8 noise
    heterogeneity: float = 0.6  # 0 = uniform texture, 1 = strongly varying
    field_scale_px: int = 96  # wavelength of the smooth variation fields


def _smooth_field(rng: Rng, size_px: int, scale_px: int) -> np.ndarray:
    """Smooth random field in [0, 1] with features ~scale_px across."""
    side = max(size_px // max(scale_px, 1) + 2, 2)
    coarse = rng.uniform(0.0, 1.0, (side, side))
    img = Image.fromarray((coarse * 255).astype(np.uint8))
    fine = img.resize((size_px, size_px), Image.BILINEAR)
    return np.asarray(fine, dtype=np.float64) / 255.0


def _rasterize_polygon(polygon: list[tuple[float, float]], size_px: int) -> np.ndarray:
    img = Image.new("L", (size_px, size_px), 0)
    ImageDraw.Draw(img).polygon([(float(x), float(y)) for x, y in polygon], fill=255)
    return np.asarray(img) > 0


def generate_sheet(
    seed: int,
    size_px: int,
    class_regions: list[tuple[str, list[tuple[float, float]]]],
    texture: TextureConfig = TextureConfig(),
) -> tuple[np.ndarray, dict[str, GroundTruthMask]]:
    """Render one synthetic sheet; deterministic for a fixed seed.

    Returns the uint8 HxWx3 raster and one exact mask per class.
    Regions of different classes must not overlap.
    """
    rng = Rng(seed)
    masks: dict[str, np.ndarray] = {}
    for class_name, polygon in class_regions:
        class_name = normalize_class_name(class_name)
        poly_mask = _rasterize_polygon(polygon, size_px)
        masks.setdefault(class_name, np.zeros((size_px, size_px), dtype=bool))
        masks[class_name] |= poly_mask

    names = list(masks)
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            if np.any(masks[names[i]] & masks[names[j]]):
                raise ValidationError(
                    f"class regions overlap: {names[i]} and {names[j]}"
                )

    img = Image.new("RGB", (size_px, size_px), PAPER_COLOR)
    draw = ImageDraw.Draw(img)

    n_lines = int(texture.noise_lines_per_megapixel * size_px * size_px / 1e6)
    for _ in range(n_lines):
        x0, y0, x1, y1 = rng.uniform(0, size_px, 4)
        draw.line([(x0, y0), (x1, y1)], fill=LINE_COLOR, width=1)

    if "wood" in masks:
        _draw_wood(draw, masks["wood"], rng, texture)
    if "settlement" in masks:
        _draw_settlement(draw, masks["settlement"], rng, texture)

    arr = np.asarray(img).astype(np.int16)
    noise = rng.normal(0.0, texture.pixel_noise, arr.shape)
    arr = np.clip(arr + noise, 0, 255).astype(np.uint8)

    gt = {
        name: GroundTruthMask(sheet=str(seed), class_name=name, mask=m)
        for name, m in masks.items()
    }
    return arr, gt


def _region_points(mask: np.ndarray, spacing: int, rng: Rng, jitter: float):
    """Jittered grid of points restricted to the mask's foreground."""
    h, w = mask.shape
    ys = np.arange(spacing // 2, h, spacing)
    xs = np.arange(spacing // 2, w, spacing)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    yy = yy.astype(float) + rng.normal(0, jitter, yy.shape)
    xx = xx.astype(float) + rng.normal(0, jitter, xx.shape)
    yy = np.clip(yy, 0, h - 1)
    xx = np.clip(xx, 0, w - 1)
    keep = mask[yy.astype(int), xx.astype(int)]
    return yy[keep], xx[keep]


def _erode(mask: np.ndarray, radius_px: float) -> np.ndarray:
    """Shrink the mask so symbols drawn at sampled centers stay inside it."""
    r = int(np.ceil(radius_px))
    if r <= 0:
        return mask
    img = Image.fromarray(mask.astype(np.uint8) * 255)
    return np.asarray(img.filter(ImageFilter.MinFilter(2 * r + 1))) > 0


def _vary_color(base: tuple[int, int, int], shift: float, het: float) -> tuple[int, int, int]:
    """Shift a base color along a fixed gradient by shift in [0, 1]."""
    delta = (shift * 2.0 - 1.0) * 70.0 * het
    r, g, b = base
    return (
        int(np.clip(r + delta, 0, 255)),
        int(np.clip(g + delta * 0.5, 0, 255)),
        int(np.clip(b - delta * 0.5, 0, 255)),
    )


def _draw_wood(draw: ImageDraw.ImageDraw, mask: np.ndarray, rng: Rng, tex: TextureConfig):
    h = tex.heterogeneity
    density = _smooth_field(rng, mask.shape[0], tex.field_scale_px)
    size_f = _smooth_field(rng, mask.shape[0], tex.field_scale_px)
    color_f = _smooth_field(rng, mask.shape[0], tex.field_scale_px)
    r_max = max(tex.wood_circle_radius * (1.0 + h), 1.0) + 1.0
    yy, xx = _region_points(_erode(mask, r_max), tex.wood_circle_spacing, rng, jitter=2.0)
    keep = rng.uniform(0.0, 1.0, len(yy)) < (1.0 - h) + h * 1.6 * density[yy.astype(int), xx.astype(int)]
    for y, x in zip(yy[keep], xx[keep]):
        r = tex.wood_circle_radius * (1.0 + h * (size_f[int(y), int(x)] * 2.0 - 1.0))
        r = max(r, 1.0)
        color = _vary_color(WOOD_COLOR, color_f[int(y), int(x)], h)
        draw.ellipse([x - r, y - r, x + r, y + r], outline=color, width=1)


def _draw_settlement(draw: ImageDraw.ImageDraw, mask: np.ndarray, rng: Rng, tex: TextureConfig):
    h = tex.heterogeneity
    density = _smooth_field(rng, mask.shape[0], tex.field_scale_px)
    size_f = _smooth_field(rng, mask.shape[0], tex.field_scale_px)
    color_f = _smooth_field(rng, mask.shape[0], tex.field_scale_px)
    s_max = max(tex.settlement_dot_size * (1.0 + h), 2.0) / 2.0 + 1.0
    yy, xx = _region_points(_erode(mask, s_max), tex.settlement_dot_spacing, rng, jitter=0.5)
    keep = rng.uniform(0.0, 1.0, len(yy)) < (1.0 - h) + h * 1.6 * density[yy.astype(int), xx.astype(int)]
    for y, x in zip(yy[keep], xx[keep]):
        s = tex.settlement_dot_size * (1.0 + h * (size_f[int(y), int(x)] * 2.0 - 1.0))
        s = max(s, 2.0)
        color = _vary_color(SETTLEMENT_COLOR, color_f[int(y), int(x)], h)
        draw.rectangle([x - s / 2, y - s / 2, x + s / 2, y + s / 2], fill=color)


def _blob_polygon(rng: Rng, cx: float, cy: float, radius: float, n_vertices: int = 10):
    angles = np.linspace(0, 2 * np.pi, n_vertices, endpoint=False)
    radii = radius * rng.uniform(0.65, 1.0, n_vertices)
    return [(cx + r * np.cos(a), cy + r * np.sin(a)) for a, r in zip(angles, radii)]


def _ring_polygon(rng: Rng, cx: float, cy: float, r_outer: float, thickness: float,
                  n_vertices: int = 40):
    """Annulus as a single keyhole polygon (outer ring CCW, inner CW)."""
    eps = 0.03  # slit angle closing the keyhole
    angles = np.linspace(eps, 2 * np.pi - eps, n_vertices)
    outer_r = r_outer * rng.uniform(0.96, 1.04, n_vertices)
    inner_r = (r_outer - thickness) * rng.uniform(0.96, 1.04, n_vertices)
    outer = [(cx + r * np.cos(a), cy + r * np.sin(a)) for a, r in zip(angles, outer_r)]
    inner = [(cx + r * np.cos(a), cy + r * np.sin(a)) for a, r in zip(angles, inner_r)]
    return outer + inner[::-1]


def benchmark_regions(seed: int, size_px: int) -> list[tuple[str, list[tuple[float, float]]]]:
    """Default non-overlapping region layout: wood forms a thick ring
    (thinner than one patch, so every wood patch also sees background),
    settlement a small blob in the far corner."""
    rng = Rng(seed)
    cx = size_px * rng.uniform(0.42, 0.50)
    cy = size_px * rng.uniform(0.45, 0.55)
    r_outer = size_px * rng.uniform(0.30, 0.34)
    thickness = size_px * rng.uniform(0.15, 0.16)
    wood = _ring_polygon(rng, cx, cy, r_outer, thickness)
    settlement = _blob_polygon(
        rng,
        cx=size_px * rng.uniform(0.86, 0.90),
        cy=size_px * rng.uniform(0.10, 0.14),
        radius=size_px * 0.09,
    )
    return [("wood", wood), ("settlement", settlement)]


def generate_benchmark(
    seed: int,
    out_dir: str | Path,
    n_sheets: int = 4,
    sheet_px: int = 1920,
    texture: TextureConfig = TextureConfig(),
) -> list[str]:
    """Write `n_sheets` synthetic sheets plus per-class masks; return sheet ids."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sheet_ids = []
    for i in range(n_sheets):
        sheet_seed = seed + i
        regions = benchmark_regions(sheet_seed, sheet_px)
        raster, gts = generate_sheet(sheet_seed, sheet_px, regions, texture)
        sheet_id = f"synth{i:02d}"
        Image.fromarray(raster).save(out_dir / f"{sheet_id}.png")
        for class_name, gt in gts.items():
            Image.fromarray(gt.mask.astype(np.uint8) * 255).save(
                out_dir / f"{sheet_id}_mask_{class_name}.png"
            )
        sheet_ids.append(sheet_id)
    return sheet_ids
