"""Crop map-sheet rasters into fixed-size patches and load ground-truth masks."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .core import (
    FormatError,
    GroundTruthMask,
    PatchId,
    PatchImage,
    Rect,
    ValidationError,
    normalize_class_name,
    tile_grid,
)

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"


@dataclass(frozen=True)
class ManifestEntry:
    patch: PatchId
    rect: Rect
    path: str  # tile image file, relative to the manifest's directory

    def to_json(self) -> str:
        return json.dumps(
            {
                "patch_id": str(self.patch),
                "sheet": self.patch.sheet,
                "row": self.patch.row,
                "col": self.patch.col,
                "y0": self.rect.y0,
                "x0": self.rect.x0,
                "h": self.rect.h,
                "w": self.rect.w,
                "path": self.path,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "ManifestEntry":
        d = json.loads(line)
        return cls(
            patch=PatchId(d["sheet"], d["row"], d["col"]),
            rect=Rect(d["y0"], d["x0"], d["h"], d["w"]),
            path=d["path"],
        )


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    path = Path(path)
    entries = []
    with path.open() as f:
        for line in f:
            line = line.strip()
            if line:
                entries.append(ManifestEntry.from_json(line))
    return entries


def write_manifest(entries: list[ManifestEntry], path: str | Path) -> None:
    path = Path(path)
    with path.open("w") as f:
        for e in entries:
            f.write(e.to_json() + "\n")


def load_raster(path: str | Path) -> np.ndarray:
    """Load an RGB raster as uint8 HxWx3."""
    try:
        img = Image.open(path)
    except FileNotFoundError:
        raise
    except OSError as e:
        raise IOError(f"cannot read raster {path}: {e}") from e
    arr = np.asarray(img)
    if arr.ndim == 3 and arr.shape[2] == 4:  # drop alpha if fully opaque
        if np.all(arr[:, :, 3] == 255):
            arr = arr[:, :, :3]
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise FormatError(f"raster {path} must have 3 channels, got shape {arr.shape}")
    return arr


def load_patch_image(path: str | Path, patch: PatchId) -> PatchImage:
    arr = load_raster(path)
    return PatchImage(id=patch, pixels=arr.astype(np.float32) / 255.0)


def ingest_sheet(
    raster_path: str | Path,
    sheet: str,
    out_dir: str | Path,
    tile_px: int = 384,
) -> list[ManifestEntry]:
    """Crop a sheet raster into full tiles; write tile PNGs and a manifest.

    Partial edge tiles are dropped. Returns the manifest entries in
    row-major order.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    arr = load_raster(raster_path)
    h, w = arr.shape[:2]
    rects = tile_grid(h, w, tile_px)
    if not rects:
        log.warning("sheet %s (%dx%d) yields no full %d px tiles", sheet, h, w, tile_px)
    entries = []
    for r, c, rect in rects:
        patch = PatchId(sheet, r, c)
        tile = arr[rect.y0 : rect.y0 + rect.h, rect.x0 : rect.x0 + rect.w]
        fname = f"{patch}.png"
        Image.fromarray(tile).save(out_dir / fname)  # PNG: lossless
        entries.append(ManifestEntry(patch=patch, rect=rect, path=fname))
    write_manifest(entries, out_dir / MANIFEST_NAME)
    return entries


def ingest_mask(
    mask_path: str | Path,
    sheet: str,
    class_name: str,
    expected_shape: tuple[int, int] | None = None,
) -> GroundTruthMask:
    """Load a ground-truth mask; any nonzero pixel counts as foreground."""
    class_name = normalize_class_name(class_name)
    img = Image.open(mask_path)
    arr = np.asarray(img)
    if arr.ndim == 3:
        arr = arr.max(axis=2)
    if expected_shape is not None and arr.shape != tuple(expected_shape):
        raise ValidationError(
            f"mask shape {arr.shape} does not match sheet shape {tuple(expected_shape)}"
        )
    return GroundTruthMask(sheet=sheet, class_name=class_name, mask=arr > 0)
