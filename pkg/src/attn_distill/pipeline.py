"""Config-driven pipeline: synth -> tile -> label -> train -> extract -> evaluate.

Each stage is skipped when its recorded input signature matches and its
outputs still exist; the run manifest records config, seeds and
signatures for every produced artifact.
"""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Any

import yaml

from . import synth
from .core import CLASS_NAMES, ValidationError
from .attnmap import extract_sheet, load_map
from .evaluator import evaluate_to_dir
from .labeler import OracleProvider, default_legend, label_patches, read_labels, write_labels
from .model import load_checkpoint
from .tiler import MANIFEST_NAME, ingest_mask, ingest_sheet, load_raster, read_manifest
from .trainer import TrainConfig, build_dataset, train

log = logging.getLogger(__name__)


class SchemaError(ValidationError):
    pass


_SCHEMA: dict[str, Any] = {
    "seed": int,
    "classes": list,
    "synth": {"sheets": int, "sheet_px": int, "train_sheets": list, "eval_sheet": str},
    "tile": {"patch_px": int, "tile_px": int},
    "label": {"provider": str, "concurrency": int},
    "train": {
        "epochs": int,
        "lr": float,
        "warmup_epochs": int,
        "batch_size": int,
        "drop_p": float,
        "gamma": float,
        "alpha": float,
        "channels": int,
        "val_fraction": float,
    },
    "evaluate": {"thresholds": list},
}

DEFAULT_CONFIG: dict[str, Any] = {
    "seed": 0,
    "classes": ["wood"],
    "synth": {
        "sheets": 4,
        "sheet_px": 1920,
        "train_sheets": ["synth00", "synth01", "synth02"],
        "eval_sheet": "synth03",
    },
    "tile": {"patch_px": 384, "tile_px": 64},
    "label": {"provider": "oracle", "concurrency": 4},
    "train": {
        "epochs": 100,
        "lr": 5e-4,
        "warmup_epochs": 5,
        "batch_size": 16,
        "drop_p": 0.2,
        "gamma": 2.0,
        "alpha": 0.25,
        "channels": 512,
        "val_fraction": 0.1,
    },
    "evaluate": {"thresholds": [round(0.1 * i, 1) for i in range(1, 10)]},
}


def validate_config(config: dict) -> dict:
    """Merge over defaults; unknown or mistyped keys raise a schema error
    naming every offending key."""
    problems: list[str] = []
    merged = json.loads(json.dumps(DEFAULT_CONFIG))

    def walk(user: dict, schema: dict, merged_section: dict, prefix: str):
        for key, value in user.items():
            if key not in schema:
                problems.append(f"unknown key: {prefix}{key}")
                continue
            expected = schema[key]
            if isinstance(expected, dict):
                if not isinstance(value, dict):
                    problems.append(f"expected mapping at {prefix}{key}")
                    continue
                walk(value, expected, merged_section[key], f"{prefix}{key}.")
            else:
                if expected is float and isinstance(value, int):
                    value = float(value)
                if not isinstance(value, expected):
                    problems.append(
                        f"wrong type at {prefix}{key}: expected {expected.__name__}"
                    )
                    continue
                merged_section[key] = value

    walk(config or {}, _SCHEMA, merged, "")
    if not merged.get("classes"):
        problems.append("missing key: classes (must list at least one class)")
    else:
        for cls in merged["classes"]:
            if cls not in CLASS_NAMES:
                problems.append(f"unknown class in classes: {cls!r}")
    if problems:
        raise SchemaError("invalid pipeline config: " + "; ".join(problems))
    return merged


def load_config(path: str | Path) -> dict:
    raw = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(raw, dict):
        raise SchemaError("pipeline config must be a mapping")
    return validate_config(raw)


def _hash_paths(paths: list[Path]) -> str:
    h = hashlib.sha256()
    for path in sorted(paths):
        h.update(str(path.name).encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def _hash_obj(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


class Pipeline:
    def __init__(self, config: dict, out_dir: str | Path):
        self.config = validate_config(config)
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.out / "pipeline-manifest.json"
        self.state: dict[str, dict] = {}
        if self.manifest_path.exists():
            self.state = json.loads(self.manifest_path.read_text())

    def _save_state(self):
        self.manifest_path.write_text(json.dumps(self.state, indent=2, sort_keys=True))

    def _stage(self, name: str, signature: str, outputs: list[Path], fn) -> bool:
        """Run fn unless the stage is up to date. Returns True if it ran."""
        prev = self.state.get(name)
        if prev and prev.get("signature") == signature and all(
            Path(p).exists() for p in prev.get("outputs", [])
        ):
            log.info("stage %s up to date, skipped", name)
            return False
        log.info("stage %s running", name)
        fn()
        self.state[name] = {
            "signature": signature,
            "outputs": [str(p) for p in outputs],
            "config": self.config,
        }
        self._save_state()
        return True

    # -- stage wiring --------------------------------------------------------

    @property
    def sheets_dir(self) -> Path:
        return self.out / "sheets"

    def patches_dir(self, sheet: str) -> Path:
        return self.out / "patches" / sheet

    @property
    def labels_path(self) -> Path:
        return self.out / "labels" / "labels.jsonl"

    def model_dir(self, cls: str) -> Path:
        return self.out / "models" / cls

    def attn_dir(self, cls: str) -> Path:
        return self.out / "attn" / cls

    @property
    def report_dir(self) -> Path:
        return self.out / "report"

    def all_sheet_ids(self) -> list[str]:
        cfg = self.config["synth"]
        return [f"synth{i:02d}" for i in range(cfg["sheets"])]

    def run(self) -> Path:
        """Run every stage in dependency order; returns the report dir."""
        self.run_synth()
        self.run_tile()
        self.run_label()
        self.run_train()
        self.run_extract()
        return self.run_evaluate()

    def run_synth(self):
        cfg = self.config["synth"]
        seed = self.config["seed"]
        sheet_ids = self.all_sheet_ids()
        outputs = [self.sheets_dir / f"{s}.png" for s in sheet_ids]
        signature = _hash_obj({"stage": "synth", "seed": seed, "cfg": cfg})
        self._stage(
            "synth",
            signature,
            outputs,
            lambda: synth.generate_benchmark(seed, self.sheets_dir, cfg["sheets"], cfg["sheet_px"]),
        )

    def run_tile(self):
        cfg = self.config["tile"]
        for sheet in self.all_sheet_ids():
            raster = self.sheets_dir / f"{sheet}.png"
            out_dir = self.patches_dir(sheet)
            signature = _hash_obj(
                {"stage": "tile", "sheet": sheet, "cfg": cfg, "raster": _hash_paths([raster])}
            )
            self._stage(
                f"tile:{sheet}",
                signature,
                [out_dir / MANIFEST_NAME],
                lambda raster=raster, sheet=sheet, out_dir=out_dir: ingest_sheet(
                    raster, sheet, out_dir, cfg["patch_px"]
                ),
            )

    def _oracle_provider(self, sheets: list[str]) -> OracleProvider:
        patch_px = self.config["tile"]["patch_px"]
        truth: dict[str, dict[str, bool]] = {}
        for sheet in sheets:
            manifest = read_manifest(self.patches_dir(sheet) / MANIFEST_NAME)
            masks = {
                cls: ingest_mask(self.sheets_dir / f"{sheet}_mask_{cls}.png", sheet, cls)
                for cls in CLASS_NAMES
                if (self.sheets_dir / f"{sheet}_mask_{cls}.png").exists()
            }
            for entry in manifest:
                r = entry.rect
                truth[str(entry.patch)] = {
                    cls: bool(m.mask[r.y0 : r.y0 + r.h, r.x0 : r.x0 + r.w].any())
                    for cls, m in masks.items()
                }
        return OracleProvider(truth)

    def run_label(self):
        cfg = self.config["label"]
        train_sheets = self.config["synth"]["train_sheets"]
        manifests = [self.patches_dir(s) / MANIFEST_NAME for s in train_sheets]
        signature = _hash_obj(
            {"stage": "label", "cfg": cfg, "manifests": _hash_paths(manifests)}
        )

        def do_label():
            self.labels_path.parent.mkdir(parents=True, exist_ok=True)
            legend = default_legend()
            all_labels, all_unlabeled = [], []
            for sheet in train_sheets:
                manifest = read_manifest(self.patches_dir(sheet) / MANIFEST_NAME)
                if cfg["provider"] == "oracle":
                    provider = self._oracle_provider([sheet])
                else:
                    raise ValidationError(
                        f"pipeline supports the oracle provider; run `attn-distill label` "
                        f"for provider {cfg['provider']!r}"
                    )
                labels, unlabeled = label_patches(
                    manifest,
                    self.patches_dir(sheet),
                    legend,
                    provider,
                    self.out / "labels" / "cache",
                    concurrency=cfg["concurrency"],
                )
                all_labels.extend(labels)
                all_unlabeled.extend(unlabeled)
            write_labels(all_labels, self.labels_path, all_unlabeled)

        self._stage("label", signature, [self.labels_path], do_label)

    def run_train(self):
        cfg = self.config["train"]
        train_sheets = self.config["synth"]["train_sheets"]
        for cls in self.config["classes"]:
            out_dir = self.model_dir(cls)
            signature = _hash_obj(
                {
                    "stage": "train",
                    "class": cls,
                    "cfg": cfg,
                    "seed": self.config["seed"],
                    "labels": _hash_paths([self.labels_path]),
                }
            )

            def do_train(cls=cls, out_dir=out_dir):
                labels = read_labels(self.labels_path)
                dataset = []
                for sheet in train_sheets:
                    manifest = read_manifest(self.patches_dir(sheet) / MANIFEST_NAME)
                    dataset.extend(
                        build_dataset(manifest, self.patches_dir(sheet), labels, cls)
                    )
                tc = TrainConfig(
                    epochs=cfg["epochs"],
                    lr=cfg["lr"],
                    warmup_epochs=cfg["warmup_epochs"],
                    batch_size=cfg["batch_size"],
                    drop_p=cfg["drop_p"],
                    gamma=cfg["gamma"],
                    alpha=cfg["alpha"],
                    channels=cfg["channels"],
                    input_px=self.config["tile"]["patch_px"],
                    tile_px=self.config["tile"]["tile_px"],
                    val_fraction=cfg["val_fraction"],
                    seed=self.config["seed"],
                )
                train(dataset, cls, tc, out_dir)

            self._stage(
                f"train:{cls}",
                signature,
                [out_dir / "best.ckpt", out_dir / "last.ckpt"],
                do_train,
            )

    def run_extract(self):
        eval_sheet = self.config["synth"]["eval_sheet"]
        for cls in self.config["classes"]:
            # extract from the final model: attention keeps sharpening long
            # after val loss bottoms out, and extraction needs sharp maps
            ckpt = self.model_dir(cls) / "last.ckpt"
            out_dir = self.attn_dir(cls)
            signature = _hash_obj(
                {"stage": "extract", "class": cls, "ckpt": _hash_paths([ckpt])}
            )

            def do_extract(cls=cls, ckpt=ckpt, out_dir=out_dir):
                model = load_checkpoint(ckpt)
                manifest = read_manifest(self.patches_dir(eval_sheet) / MANIFEST_NAME)
                extract_sheet(manifest, model, self.patches_dir(eval_sheet), out_dir)

            self._stage(
                f"extract:{cls}",
                signature,
                [out_dir / f"mosaic_{eval_sheet}_{cls}.png"],
                do_extract,
            )

    def run_evaluate(self) -> Path:
        eval_sheet = self.config["synth"]["eval_sheet"]
        thresholds = self.config["evaluate"]["thresholds"]
        tile = self.config["tile"]["tile_px"]
        report_dir = self.report_dir
        attn_hashes = {
            cls: _hash_paths(sorted(self.attn_dir(cls).glob("attnmap_*.json")))
            for cls in self.config["classes"]
        }
        signature = _hash_obj(
            {"stage": "evaluate", "thresholds": thresholds, "attn": attn_hashes}
        )

        def do_evaluate():
            report_dir.mkdir(parents=True, exist_ok=True)
            raster = load_raster(self.sheets_dir / f"{eval_sheet}.png")
            all_reports = []
            for cls in self.config["classes"]:
                maps = [
                    load_map(p) for p in sorted(self.attn_dir(cls).glob("attnmap_*.json"))
                ]
                mask = ingest_mask(
                    self.sheets_dir / f"{eval_sheet}_mask_{cls}.png", eval_sheet, cls
                )
                cls_dir = report_dir / cls
                reports = evaluate_to_dir(
                    maps, mask, cls, thresholds, cls_dir, raster=raster, tile=tile
                )
                all_reports.extend(reports)
            from .evaluator import write_report_csv

            write_report_csv(all_reports, report_dir / "report.csv")

        self._stage("evaluate", signature, [report_dir / "report.csv"], do_evaluate)
        return report_dir
