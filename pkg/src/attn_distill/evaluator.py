"""Dual-resolution comparison of attention maps against ground-truth masks.

Down-sampled mode coarsens the ground truth to the token grid (a tile is
foreground if it contains any foreground pixel); up-sampled mode
broadcasts each attention weight uniformly over its pixel block. Both are
thresholded and scored with IoU / precision / recall over pooled counts.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .core import AttentionMap, GroundTruthMask, InvalidArgument, ValidationError
from .attnmap import stitch_maps
from .viz import overlay_on_raster

MODES = ("down_sampled", "up_sampled")


@dataclass(frozen=True)
class EvalReport:
    class_name: str
    mode: str
    threshold: float
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def iou(self) -> float:
        denom = self.tp + self.fp + self.fn
        if denom == 0:
            return 1.0  # both prediction and ground truth empty
        return self.tp / denom

    @property
    def precision(self) -> float:
        if self.tp + self.fp == 0:
            return 1.0 if self.fn == 0 else 0.0
        return self.tp / (self.tp + self.fp)

    @property
    def recall(self) -> float:
        if self.tp + self.fn == 0:
            return 1.0 if self.fp == 0 else 0.0
        return self.tp / (self.tp + self.fn)


def downsample_gt(mask: GroundTruthMask, tile: int = 64) -> np.ndarray:
    """Token-resolution ground truth: a cell is foreground if its tile
    contains any foreground pixel."""
    m = mask.mask
    h, w = m.shape
    if h % tile or w % tile:
        raise ValidationError(f"mask dims {h}x{w} not divisible by tile {tile}")
    return m.reshape(h // tile, tile, w // tile, tile).any(axis=(1, 3))


def upsample_attention(map_: AttentionMap | np.ndarray, tile: int = 64) -> np.ndarray:
    """Broadcast each weight uniformly over its tile's pixels."""
    weights = map_.weights if isinstance(map_, AttentionMap) else np.asarray(map_)
    return np.repeat(np.repeat(weights, tile, axis=0), tile, axis=1)


def binarize(confidences: np.ndarray, threshold: float) -> np.ndarray:
    """Foreground where confidence is strictly greater than the threshold."""
    if not (0.0 < threshold < 1.0):
        raise InvalidArgument(f"threshold must be in (0, 1), got {threshold}")
    return np.asarray(confidences) > threshold


def score(pred: np.ndarray, gt: np.ndarray, class_name: str, mode: str, threshold: float) -> EvalReport:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValidationError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    tp = int(np.sum(pred & gt))
    fp = int(np.sum(pred & ~gt))
    fn = int(np.sum(~pred & gt))
    tn = int(np.sum(~pred & ~gt))
    return EvalReport(class_name, mode, threshold, tp, fp, fn, tn)


def _sheet_arrays(maps: list[AttentionMap], mask: GroundTruthMask, tile: int):
    """Confidence/GT pairs for both modes, cropped to the tiled extent."""
    grid = stitch_maps(maps)
    gh, gw = grid.shape
    cropped = GroundTruthMask(
        sheet=mask.sheet,
        class_name=mask.class_name,
        mask=mask.mask[: gh * tile, : gw * tile],
    )
    gt_down = downsample_gt(cropped, tile)
    conf_up = upsample_attention(grid, tile)
    return {"down_sampled": (grid, gt_down), "up_sampled": (conf_up, cropped.mask)}


def sweep(
    maps: list[AttentionMap],
    mask: GroundTruthMask,
    class_name: str,
    thresholds: list[float],
    tile: int = 64,
) -> list[EvalReport]:
    """One report per (mode, threshold), pooled over all patches."""
    if not maps or not thresholds:
        raise InvalidArgument("sweep needs at least one attention map and one threshold")
    arrays = _sheet_arrays(maps, mask, tile)
    reports = []
    for mode in MODES:
        conf, gt = arrays[mode]
        for sigma in thresholds:
            reports.append(score(binarize(conf, sigma), gt, class_name, mode, sigma))
    return reports


def write_report_csv(reports: list[EvalReport], path: str | Path) -> None:
    with Path(path).open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["class", "mode", "threshold", "iou", "precision", "recall", "tp", "fp", "fn", "tn"]
        )
        for r in reports:
            writer.writerow(
                [
                    r.class_name,
                    r.mode,
                    f"{r.threshold:.6g}",
                    f"{r.iou:.6f}",
                    f"{r.precision:.6f}",
                    f"{r.recall:.6f}",
                    r.tp,
                    r.fp,
                    r.fn,
                    r.tn,
                ]
            )


def plot_sweep(reports: list[EvalReport], mode: str, path: str | Path) -> None:
    rows = sorted((r for r in reports if r.mode == mode), key=lambda r: r.threshold)
    if not rows:
        raise InvalidArgument(f"no reports for mode {mode!r}")
    xs = [r.threshold for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(xs, [r.iou for r in rows], marker="o", label="IoU")
    ax.plot(xs, [r.precision for r in rows], marker="s", label="precision")
    ax.plot(xs, [r.recall for r in rows], marker="^", label="recall")
    ax.set_xlabel("attention weight threshold")
    ax.set_ylabel("score")
    ax.set_ylim(0, 1.05)
    ax.set_title(f"{rows[0].class_name} ({mode.replace('_', '-')})")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_overlay(raster: np.ndarray, maps: list[AttentionMap], path: str | Path) -> None:
    grid = stitch_maps(maps)
    overlay_on_raster(raster, grid).save(path)


def evaluate_to_dir(
    maps: list[AttentionMap],
    mask: GroundTruthMask,
    class_name: str,
    thresholds: list[float],
    out_dir: str | Path,
    raster: np.ndarray | None = None,
    tile: int = 64,
) -> list[EvalReport]:
    """Run a sweep and emit report.csv, both sweep plots, and optionally the
    sheet overlay image."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = sweep(maps, mask, class_name, thresholds, tile)
    write_report_csv(reports, out_dir / "report.csv")
    plot_sweep(reports, "down_sampled", out_dir / "sweep_down.png")
    plot_sweep(reports, "up_sampled", out_dir / "sweep_up.png")
    if raster is not None:
        render_overlay(raster, maps, out_dir / f"overlay_{mask.sheet}.png")
    return reports
