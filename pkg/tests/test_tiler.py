import logging

import numpy as np
import pytest
from PIL import Image

from attn_distill.core import FormatError, ValidationError
from attn_distill.tiler import (
    MANIFEST_NAME,
    ingest_mask,
    ingest_sheet,
    load_patch_image,
    read_manifest,
)


def save_raster(path, h, w, seed=0):
    arr = np.random.default_rng(seed).integers(0, 256, (h, w, 3), dtype=np.uint8)
    Image.fromarray(arr).save(path)
    return arr


class TestIngestSheet:
    def test_four_patches(self, tmp_path):
        raster = tmp_path / "sheet.png"
        save_raster(raster, 768, 768)
        entries = ingest_sheet(raster, "s1", tmp_path / "out", 384)
        assert len(entries) == 4
        assert [(e.patch.row, e.patch.col) for e in entries] == [(0, 0), (0, 1), (1, 0), (1, 1)]

    def test_patch_dimensions(self, tmp_path):
        raster = tmp_path / "sheet.png"
        save_raster(raster, 768, 1152)
        out = tmp_path / "out"
        entries = ingest_sheet(raster, "s1", out, 384)
        img = load_patch_image(out / entries[0].path, entries[0].patch)
        assert img.pixels.shape == (384, 384, 3)
        assert 0.0 <= img.pixels.min() and img.pixels.max() <= 1.0

    def test_too_small_sheet_empty_manifest(self, tmp_path, caplog):
        raster = tmp_path / "small.png"
        save_raster(raster, 383, 383)
        with caplog.at_level(logging.WARNING):
            entries = ingest_sheet(raster, "s1", tmp_path / "out", 384)
        assert entries == []
        assert any("no full" in m for m in caplog.messages)
        assert read_manifest(tmp_path / "out" / MANIFEST_NAME) == []

    def test_reingest_byte_identical_manifest(self, tmp_path):
        raster = tmp_path / "sheet.png"
        save_raster(raster, 768, 768)
        ingest_sheet(raster, "s1", tmp_path / "a", 384)
        ingest_sheet(raster, "s1", tmp_path / "b", 384)
        assert (tmp_path / "a" / MANIFEST_NAME).read_bytes() == (
            tmp_path / "b" / MANIFEST_NAME
        ).read_bytes()

    def test_rects_disjoint_and_inside(self, tmp_path):
        raster = tmp_path / "sheet.png"
        save_raster(raster, 900, 1200)
        entries = ingest_sheet(raster, "s1", tmp_path / "out", 384)
        covered = np.zeros((900, 1200), dtype=int)
        for e in entries:
            covered[e.rect.y0 : e.rect.y0 + e.rect.h, e.rect.x0 : e.rect.x0 + e.rect.w] += 1
        assert covered.max() <= 1

    def test_tiles_reproduce_source_pixels(self, tmp_path):
        raster = tmp_path / "sheet.png"
        arr = save_raster(raster, 768, 768, seed=3)
        out = tmp_path / "out"
        entries = ingest_sheet(raster, "s1", out, 384)
        e = entries[3]
        tile = np.asarray(Image.open(out / e.path))
        np.testing.assert_array_equal(
            tile, arr[e.rect.y0 : e.rect.y0 + 384, e.rect.x0 : e.rect.x0 + 384]
        )

    def test_wrong_channel_count(self, tmp_path):
        raster = tmp_path / "gray.png"
        Image.fromarray(np.zeros((400, 400), dtype=np.uint8)).save(raster)
        with pytest.raises(FormatError):
            ingest_sheet(raster, "s1", tmp_path / "out", 384)

    def test_unreadable_file(self, tmp_path):
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"not an image")
        with pytest.raises(OSError):
            ingest_sheet(bad, "s1", tmp_path / "out", 384)


class TestIngestMask:
    def test_all_zero(self, tmp_path):
        path = tmp_path / "m.png"
        Image.fromarray(np.zeros((128, 128), dtype=np.uint8)).save(path)
        gt = ingest_mask(path, "s1", "wood")
        assert not gt.mask.any()

    def test_single_pixel(self, tmp_path):
        arr = np.zeros((128, 128), dtype=np.uint8)
        arr[5, 9] = 1
        path = tmp_path / "m.png"
        Image.fromarray(arr).save(path)
        gt = ingest_mask(path, "s1", "settlement")
        assert gt.mask.sum() == 1 and gt.mask[5, 9]

    def test_threshold_at_zero(self, tmp_path):
        arr = np.zeros((4, 4), dtype=np.uint8)
        arr[0, 0], arr[1, 1], arr[2, 2] = 0, 128, 255
        path = tmp_path / "m.png"
        Image.fromarray(arr).save(path)
        gt = ingest_mask(path, "s1", "wood")
        np.testing.assert_array_equal(gt.mask, arr > 0)

    def test_dimension_mismatch(self, tmp_path):
        path = tmp_path / "m.png"
        Image.fromarray(np.zeros((64, 64), dtype=np.uint8)).save(path)
        with pytest.raises(ValidationError):
            ingest_mask(path, "s1", "wood", expected_shape=(128, 128))
