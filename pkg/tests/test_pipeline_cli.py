import csv

import pytest
import yaml
from click.testing import CliRunner

from attn_distill.cli import main, parse_threshold_spec
from attn_distill.pipeline import (
    DEFAULT_CONFIG,
    Pipeline,
    SchemaError,
    load_config,
    validate_config,
)

MICRO = {
    "seed": 0,
    "classes": ["wood"],
    "synth": {
        "sheets": 2,
        "sheet_px": 768,
        "train_sheets": ["synth00"],
        "eval_sheet": "synth01",
    },
    "train": {"epochs": 2, "warmup_epochs": 1, "batch_size": 2, "channels": 16},
}


class TestValidateConfig:
    def test_empty_user_config_gives_defaults(self):
        assert validate_config({}) == DEFAULT_CONFIG

    def test_partial_override_merges(self):
        cfg = validate_config({"train": {"epochs": 3}})
        assert cfg["train"]["epochs"] == 3
        assert cfg["train"]["lr"] == 5e-4
        assert cfg["synth"]["sheets"] == 4

    def test_unknown_keys_all_listed(self):
        with pytest.raises(SchemaError) as err:
            validate_config({"bogus": 1, "train": {"momentum": 0.9}})
        assert "bogus" in str(err.value)
        assert "train.momentum" in str(err.value)

    def test_wrong_type_reported(self):
        with pytest.raises(SchemaError, match="train.epochs"):
            validate_config({"train": {"epochs": "many"}})

    def test_int_accepted_for_float_field(self):
        cfg = validate_config({"train": {"gamma": 2}})
        assert cfg["train"]["gamma"] == 2.0

    def test_missing_classes_rejected(self):
        with pytest.raises(SchemaError, match="classes"):
            validate_config({"classes": []})

    def test_unknown_class_rejected(self):
        with pytest.raises(SchemaError, match="river"):
            validate_config({"classes": ["river"]})


class TestLoadConfig:
    def test_yaml_roundtrip(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text(yaml.safe_dump(MICRO))
        cfg = load_config(path)
        assert cfg["train"]["epochs"] == 2
        assert cfg["synth"]["eval_sheet"] == "synth01"

    def test_non_mapping_rejected(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text("- a\n- b\n")
        with pytest.raises(SchemaError):
            load_config(path)


class TestParseThresholdSpec:
    def test_range(self):
        assert parse_threshold_spec("0.1:0.9:0.1") == pytest.approx(
            [0.1 * i for i in range(1, 10)]
        )

    def test_comma_list(self):
        assert parse_threshold_spec("0.25,0.5") == [0.25, 0.5]

    def test_single_value(self):
        assert parse_threshold_spec("0.5") == [0.5]


@pytest.fixture(scope="module")
def micro_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipeline")
    report_dir = Pipeline(MICRO, out).run()
    return out, report_dir


class TestPipeline:
    def test_end_to_end_artifacts(self, micro_run):
        out, report_dir = micro_run
        assert (out / "sheets" / "synth00.png").exists()
        assert (out / "patches" / "synth00" / "manifest.jsonl").exists()
        assert (out / "labels" / "labels.jsonl").exists()
        assert (out / "models" / "wood" / "best.ckpt").exists()
        assert (out / "attn" / "wood" / "mosaic_synth01_wood.png").exists()
        assert (out / "pipeline-manifest.json").exists()
        with (report_dir / "report.csv").open() as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 18  # 9 thresholds x 2 modes
        assert {r["class"] for r in rows} == {"wood"}

    def test_rerun_skips_all_stages(self, micro_run):
        out, report_dir = micro_run
        report = report_dir / "report.csv"
        ckpt = out / "models" / "wood" / "best.ckpt"
        before = (report.stat().st_mtime_ns, ckpt.stat().st_mtime_ns)
        Pipeline(MICRO, out).run()
        after = (report.stat().st_mtime_ns, ckpt.stat().st_mtime_ns)
        assert before == after

    def test_changed_config_reruns_downstream(self, micro_run):
        out, report_dir = micro_run
        sheets_png = out / "sheets" / "synth00.png"
        synth_before = sheets_png.stat().st_mtime_ns
        changed = dict(MICRO, train=dict(MICRO["train"], epochs=3))
        Pipeline(changed, out).run()
        assert sheets_png.stat().st_mtime_ns == synth_before  # synth unchanged
        records = (out / "models" / "wood" / "metrics.jsonl").read_text().splitlines()
        assert len(records) == 3  # retrained with the new epoch count

    def test_cli_pipeline_on_same_dir_skips(self, micro_run, tmp_path):
        out, report_dir = micro_run
        cfg_path = tmp_path / "cfg.yaml"
        cfg_path.write_text(yaml.safe_dump(MICRO))
        result = CliRunner().invoke(
            main, ["pipeline", "--config", str(cfg_path), "--out", str(out)]
        )
        assert result.exit_code == 0, result.output
        assert "report.csv" in result.output


class TestCliCommands:
    def test_synth_and_tile(self, tmp_path):
        runner = CliRunner()
        result = runner.invoke(
            main,
            ["synth", "--seed", "1", "--sheets", "1", "--size", "512",
             "--out", str(tmp_path / "sheets")],
        )
        assert result.exit_code == 0, result.output
        assert (tmp_path / "sheets" / "synth00.png").exists()
        result = runner.invoke(
            main,
            ["tile", "--input", str(tmp_path / "sheets" / "synth00.png"),
             "--sheet", "synth00", "--size", "256", "--out", str(tmp_path / "p")],
        )
        assert result.exit_code == 0, result.output
        assert "wrote 4 patches" in result.output

    def test_tile_mask(self, tmp_path):
        runner = CliRunner()
        runner.invoke(
            main,
            ["synth", "--seed", "1", "--sheets", "1", "--size", "512",
             "--out", str(tmp_path / "sheets")],
        )
        result = runner.invoke(
            main,
            ["tile-mask", "--input", str(tmp_path / "sheets" / "synth00_mask_wood.png"),
             "--sheet", "synth00", "--class", "wood",
             "--out", str(tmp_path / "mask.png")],
        )
        assert result.exit_code == 0, result.output
        assert "foreground fraction" in result.output

    def test_evaluate_requires_maps(self, tmp_path):
        (tmp_path / "attn").mkdir()
        (tmp_path / "gt.png").write_bytes(b"")
        result = CliRunner().invoke(
            main,
            ["evaluate", "--attn", str(tmp_path / "attn"), "--gt", str(tmp_path / "gt.png"),
             "--sheet", "s", "--class", "wood", "--out", str(tmp_path / "rep")],
        )
        assert result.exit_code != 0
        assert "no attention map" in result.output

    def test_label_unknown_provider(self, tmp_path):
        (tmp_path / "manifest.jsonl").write_text("")
        (tmp_path / "legend.png").write_bytes(b"")
        result = CliRunner().invoke(
            main,
            ["label", "--manifest", str(tmp_path / "manifest.jsonl"),
             "--legend", str(tmp_path / "legend.png"), "--provider", "nope",
             "--cache", str(tmp_path / "c"), "--out", str(tmp_path / "l.jsonl")],
        )
        assert result.exit_code != 0
        assert "unknown provider" in result.output
