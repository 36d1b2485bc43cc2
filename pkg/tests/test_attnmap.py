import hashlib
import json

import numpy as np
import pytest
import torch
from PIL import Image

from attn_distill.attnmap import (
    extract_map,
    extract_sheet,
    load_map,
    map_filename,
    save_map,
    stitch_maps,
)
from attn_distill.core import AttentionMap, InvalidArgument, PatchId
from attn_distill.model import Classifier, ModelConfig
from attn_distill.tiler import ingest_sheet, read_manifest, MANIFEST_NAME
from conftest import make_image


@pytest.fixture(scope="module")
def model_l4():
    torch.manual_seed(2)
    return Classifier(ModelConfig(channels=8, input_px=128))


class TestExtractMap:
    def test_single_token_map_is_one(self):
        torch.manual_seed(0)
        model = Classifier(ModelConfig(channels=8, input_px=64))
        result = extract_map(make_image(0, 64, 64), model)
        assert result.weights.shape == (1, 1)
        assert result.weights[0, 0] == pytest.approx(1.0)

    def test_first_round_max_recorded_then_token_retired(self, model_l4):
        image = make_image(1, 128, 128)
        # reproduce round 1 by hand: full attention, argmax recorded
        from attn_distill.model import cross_attention, encode

        with torch.no_grad():
            grid = encode(image, model_l4)
            _, w0 = cross_attention(grid, model_l4)
        j = int(np.argmax(w0.numpy()))
        result = extract_map(image, model_l4)
        flat = result.weights.reshape(-1)
        assert flat[j] == pytest.approx(float(w0[j]), abs=1e-6)
        # the retired token is excluded from round 2: its final value stays
        # the round-1 weight even though later rounds renormalize upward
        others = np.delete(flat, j)
        assert (others > 0).all()

    def test_coverage_every_position_once(self):
        for seed in range(5):
            torch.manual_seed(seed)
            model = Classifier(ModelConfig(channels=8, input_px=128))
            result = extract_map(make_image(seed, 128, 128), model)
            assert result.weights.shape == (2, 2)
            assert (result.weights > 0).all() and (result.weights <= 1).all()

    def test_exactly_l_forward_passes(self, model_l4):
        before = model_l4.attention_forward_count
        extract_map(make_image(2, 128, 128), model_l4)
        assert model_l4.attention_forward_count - before == 4

    def test_final_weight_is_one(self, model_l4):
        result = extract_map(make_image(3, 128, 128), model_l4)
        assert np.isclose(result.weights, 1.0).sum() >= 1
        assert result.weights.max() == pytest.approx(1.0)

    def test_deterministic(self, model_l4):
        image = make_image(4, 128, 128)
        a = extract_map(image, model_l4)
        b = extract_map(image, model_l4)
        np.testing.assert_array_equal(a.weights, b.weights)

    def test_size_mismatch_rejected(self, model_l4):
        with pytest.raises(InvalidArgument):
            extract_map(make_image(5, 384, 384), model_l4)


class TestMapFiles:
    def test_roundtrip_full_precision(self, tmp_path):
        weights = np.random.default_rng(0).random((6, 6))
        map_ = AttentionMap(PatchId("s", 1, 2), "wood", weights)
        path = tmp_path / map_filename(map_)
        save_map(map_, path)
        loaded = load_map(path)
        assert loaded.patch == map_.patch
        assert loaded.class_name == "wood"
        np.testing.assert_array_equal(loaded.weights, weights)

    def test_file_is_structured_text(self, tmp_path):
        map_ = AttentionMap(PatchId("s", 0, 0), "wood", np.zeros((2, 3)))
        path = tmp_path / "m.json"
        save_map(map_, path)
        d = json.loads(path.read_text())
        assert d["m"] == 2 and d["n"] == 3 and len(d["weights"]) == 6


class TestStitch:
    def test_2x2_arrangement(self):
        maps = [
            AttentionMap(PatchId("s", r, c), "wood", np.full((2, 2), r * 2 + c, dtype=float) / 4)
            for r in range(2)
            for c in range(2)
        ]
        grid = stitch_maps(maps)
        assert grid.shape == (4, 4)
        assert grid[0, 0] == 0.0
        assert grid[0, 2] == 0.25
        assert grid[2, 0] == 0.5
        assert grid[2, 2] == 0.75


class TestExtractSheet:
    @pytest.fixture()
    def sheet_setup(self, tmp_path):
        arr = (np.random.default_rng(1).random((256, 256, 3)) * 255).astype(np.uint8)
        raster = tmp_path / "sheet.png"
        Image.fromarray(arr).save(raster)
        patches_dir = tmp_path / "patches"
        ingest_sheet(raster, "sheetA", patches_dir, 128)
        manifest = read_manifest(patches_dir / MANIFEST_NAME)
        torch.manual_seed(3)
        model = Classifier(ModelConfig(channels=8, input_px=128, class_name="wood"))
        return manifest, model, patches_dir

    def test_mosaic_and_maps(self, sheet_setup, tmp_path):
        manifest, model, patches_dir = sheet_setup
        out = tmp_path / "attn"
        maps = extract_sheet(manifest, model, patches_dir, out)
        assert len(maps) == 4
        assert (out / "mosaic_sheetA_wood.png").exists()
        assert len(list(out.glob("attnmap_*.json"))) == 4

    def test_missing_patch_skipped(self, sheet_setup, tmp_path, caplog):
        manifest, model, patches_dir = sheet_setup
        (patches_dir / manifest[0].path).unlink()
        maps = extract_sheet(manifest, model, patches_dir, tmp_path / "attn2")
        assert len(maps) == 3

    def test_rerun_identical(self, sheet_setup, tmp_path):
        manifest, model, patches_dir = sheet_setup

        def digest(out):
            extract_sheet(manifest, model, patches_dir, out)
            h = hashlib.sha256()
            for p in sorted(out.glob("attnmap_*.json")):
                h.update(p.read_bytes())
            return h.hexdigest()

        assert digest(tmp_path / "a") == digest(tmp_path / "b")
