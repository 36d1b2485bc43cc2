"""Iterative attention-map extraction.

A trained classifier attends to only a few decisive tokens per forward
pass. To cover the whole patch, the extractor runs L attention passes:
each pass records the current maximum attention weight at its grid
position, then zeroes that token and masks it out, until every position
has been assigned exactly once.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
import torch

from .core import AttentionMap, InvalidArgument, PatchImage
from .model import Classifier, encode
from .tiler import ManifestEntry, load_patch_image
from .viz import render_heatmap

log = logging.getLogger(__name__)


def extract_map(image: PatchImage, model: Classifier) -> AttentionMap:
    """Build the full-coverage attention map for one patch.

    Exactly L attention forward passes; argmax ties break to the lowest
    flat index; the final pass always records 1.0 (softmax over one token).
    """
    if image.height % model.config.tile_px or image.width % model.config.tile_px:
        raise InvalidArgument(
            f"image dims {image.height}x{image.width} incompatible with tile size "
            f"{model.config.tile_px}"
        )
    model.eval()
    with torch.no_grad():
        grid = encode(image, model)
        if grid.tokens.shape[0] != model.config.num_tokens:
            raise InvalidArgument(
                f"image yields {grid.tokens.shape[0]} tokens, checkpoint expects "
                f"{model.config.num_tokens}"
            )
        L = grid.tokens.shape[0]
        tokens = grid.tokens.clone().unsqueeze(0)
        mask = grid.mask.clone().unsqueeze(0)
        result = np.zeros(L, dtype=np.float64)
        for _ in range(L):
            _, weights = model.attend_batch(tokens, mask)
            w = weights.squeeze(0).numpy()
            w = np.where(mask.squeeze(0).numpy(), w, -1.0)
            j = int(np.argmax(w))
            result[j] = w[j]
            tokens[0, j] = 0.0
            mask[0, j] = False
    return AttentionMap(
        patch=image.id,
        class_name=model.config.class_name,
        weights=np.clip(result, 0.0, 1.0).reshape(grid.m, grid.n),
        token_pixels=model.config.tile_px,
    )


def map_filename(map_: AttentionMap) -> str:
    return f"attnmap_{map_.patch}_{map_.class_name}.json"


def save_map(map_: AttentionMap, path: str | Path) -> None:
    payload = {
        "patch_id": str(map_.patch),
        "class": map_.class_name,
        "m": int(map_.weights.shape[0]),
        "n": int(map_.weights.shape[1]),
        "token_pixels": map_.token_pixels,
        "weights": [float(v) for v in map_.weights.reshape(-1)],
    }
    Path(path).write_text(json.dumps(payload) + "\n")


def load_map(path: str | Path) -> AttentionMap:
    d = json.loads(Path(path).read_text())
    from .core import PatchId

    weights = np.asarray(d["weights"], dtype=np.float64).reshape(d["m"], d["n"])
    return AttentionMap(
        patch=PatchId.parse(d["patch_id"]),
        class_name=d["class"],
        weights=weights,
        token_pixels=d.get("token_pixels", 64),
    )


def stitch_maps(maps: list[AttentionMap]) -> np.ndarray:
    """Arrange per-patch maps into one sheet-level weight grid."""
    if not maps:
        raise InvalidArgument("no attention maps to stitch")
    m, n = maps[0].weights.shape
    rows = max(a.patch.row for a in maps) + 1
    cols = max(a.patch.col for a in maps) + 1
    grid = np.zeros((rows * m, cols * n), dtype=np.float64)
    for a in maps:
        grid[a.patch.row * m : (a.patch.row + 1) * m, a.patch.col * n : (a.patch.col + 1) * n] = (
            a.weights
        )
    return grid


def extract_sheet(
    manifest: list[ManifestEntry],
    model: Classifier,
    patches_dir: str | Path,
    out_dir: str | Path,
) -> list[AttentionMap]:
    """Extract maps for every patch in the manifest; persist per-patch map
    files and a colored sheet mosaic. Missing patch files are logged and
    skipped."""
    patches_dir = Path(patches_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    maps: list[AttentionMap] = []
    for entry in manifest:
        path = patches_dir / entry.path
        if not path.exists():
            log.warning("patch file missing, skipped: %s", path)
            continue
        image = load_patch_image(path, entry.patch)
        map_ = extract_map(image, model)
        save_map(map_, out_dir / map_filename(map_))
        maps.append(map_)
    if maps:
        sheet = maps[0].patch.sheet
        mosaic = stitch_maps(maps)
        render_heatmap(mosaic, cell_px=16).save(
            out_dir / f"mosaic_{sheet}_{model.config.class_name}.png"
        )
    return maps
