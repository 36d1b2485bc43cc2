"""`attn-distill` command-line entry point."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np
from PIL import Image

from . import synth
from .attnmap import extract_sheet
from .core import CLASS_NAMES
from .evaluator import evaluate_to_dir
from .labeler import (
    OpenAiCompatProvider,
    ReplayProvider,
    label_patches,
    read_labels,
    write_labels,
)
from .model import load_checkpoint
from .pipeline import Pipeline, load_config
from .review import LabelStore, collect_manifests, create_app
from .tiler import MANIFEST_NAME, ingest_mask, ingest_sheet, load_raster, read_manifest
from .trainer import TrainConfig, build_dataset, evaluate_classification, train


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool):
    """Distill coarse LLM labels into fine-grained map-patch annotations."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command("synth")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--sheets", type=int, default=4, show_default=True)
@click.option("--size", "sheet_px", type=int, default=1920, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
def synth_cmd(seed: int, sheets: int, sheet_px: int, out: Path):
    """Generate synthetic map-like sheets with exact ground-truth masks."""
    ids = synth.generate_benchmark(seed, out, sheets, sheet_px)
    click.echo(f"wrote {len(ids)} sheets to {out}: {', '.join(ids)}")


@main.command("tile")
@click.option("--input", "raster", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--sheet", required=True, help="Sheet identifier.")
@click.option("--size", "tile_px", type=int, default=384, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
def tile_cmd(raster: Path, sheet: str, tile_px: int, out: Path):
    """Crop a sheet raster into patches and write a manifest."""
    entries = ingest_sheet(raster, sheet, out, tile_px)
    click.echo(f"wrote {len(entries)} patches to {out}")


@main.command("tile-mask")
@click.option("--input", "mask_file", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--sheet", required=True)
@click.option("--class", "class_name", type=click.Choice(CLASS_NAMES), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
def tile_mask_cmd(mask_file: Path, sheet: str, class_name: str, out: Path):
    """Normalize a ground-truth mask (any nonzero pixel = foreground)."""
    gt = ingest_mask(mask_file, sheet, class_name)
    out.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(gt.mask.astype(np.uint8) * 255).save(out)
    click.echo(
        f"mask {gt.mask.shape[0]}x{gt.mask.shape[1]}, "
        f"foreground fraction {gt.mask.mean():.4f} -> {out}"
    )


@main.command("label")
@click.option("--manifest", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--legend", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--provider", default="replay", show_default=True,
              help="replay, or http (requires --base-url/--model).")
@click.option("--base-url", default=None)
@click.option("--model", "model_name", default=None)
@click.option("--cache", type=click.Path(path_type=Path), required=True)
@click.option("--concurrency", type=int, default=4, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
def label_cmd(manifest, legend, provider, base_url, model_name, cache, concurrency, out: Path):
    """Query a vision LLM for coarse patch labels (cached, resumable)."""
    if provider == "replay":
        prov = ReplayProvider()
    elif provider == "http":
        if not base_url or not model_name:
            raise click.UsageError("--provider http requires --base-url and --model")
        prov = OpenAiCompatProvider(base_url, model_name)
    else:
        raise click.UsageError(f"unknown provider: {provider}")
    entries = read_manifest(manifest)
    legend_img = Image.open(legend)
    labels, unlabeled = label_patches(
        entries, manifest.parent, legend_img, prov, cache, concurrency=concurrency
    )
    out.parent.mkdir(parents=True, exist_ok=True)
    write_labels(labels, out, unlabeled)
    click.echo(f"{len(labels)} labels, {len(unlabeled)} unlabeled patches -> {out}")


@main.command("train")
@click.option("--class", "class_name", type=click.Choice(CLASS_NAMES), required=True)
@click.option("--labels", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--patches", type=click.Path(exists=True, path_type=Path), required=True,
              help="Directory containing patch tiles and manifest.jsonl.")
@click.option("--epochs", type=int, default=100, show_default=True)
@click.option("--lr", type=float, default=5e-4, show_default=True)
@click.option("--warmup", type=int, default=5, show_default=True)
@click.option("--batch-size", type=int, default=16, show_default=True)
@click.option("--drop-p", type=float, default=0.2, show_default=True)
@click.option("--gamma", type=float, default=2.0, show_default=True)
@click.option("--alpha", type=float, default=0.25, show_default=True)
@click.option("--channels", type=int, default=512, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
def train_cmd(class_name, labels, patches: Path, epochs, lr, warmup, batch_size,
              drop_p, gamma, alpha, channels, seed, out: Path):
    """Train one binary classifier from coarse labels."""
    entries = read_manifest(patches / MANIFEST_NAME)
    dataset = build_dataset(entries, patches, read_labels(labels), class_name)
    config = TrainConfig(
        epochs=epochs, lr=lr, warmup_epochs=warmup, batch_size=batch_size,
        drop_p=drop_p, gamma=gamma, alpha=alpha, channels=channels, seed=seed,
    )
    best = train(dataset, class_name, config, out)
    model = load_checkpoint(best)
    metrics = evaluate_classification(model, dataset)
    click.echo(f"best checkpoint: {best}")
    click.echo(json.dumps(metrics))


@main.command("extract")
@click.option("--checkpoint", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--patches", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
def extract_cmd(checkpoint: Path, patches: Path, out: Path):
    """Extract full-coverage attention maps for every patch in a manifest."""
    model = load_checkpoint(checkpoint)
    entries = read_manifest(patches / MANIFEST_NAME)
    maps = extract_sheet(entries, model, patches, out)
    click.echo(f"wrote {len(maps)} attention maps to {out}")


def parse_threshold_spec(spec: str) -> list[float]:
    """'0.1:0.9:0.1' -> [0.1, ..., 0.9]; a comma list also works."""
    if ":" in spec:
        lo, hi, step = (float(x) for x in spec.split(":"))
        n = int(round((hi - lo) / step)) + 1
        return [round(lo + i * step, 10) for i in range(n)]
    return [float(x) for x in spec.split(",")]


@main.command("evaluate")
@click.option("--attn", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--gt", type=click.Path(exists=True, path_type=Path), required=True,
              help="Ground-truth mask image for the evaluated sheet.")
@click.option("--sheet", required=True)
@click.option("--class", "class_name", type=click.Choice(CLASS_NAMES), required=True)
@click.option("--thresholds", default="0.1:0.9:0.1", show_default=True)
@click.option("--raster", type=click.Path(exists=True, path_type=Path), default=None,
              help="Sheet raster for the overlay rendering.")
@click.option("--out", type=click.Path(path_type=Path), required=True)
def evaluate_cmd(attn: Path, gt: Path, sheet, class_name, thresholds, raster, out: Path):
    """Score attention maps against ground truth in both alignment modes."""
    from .attnmap import load_map

    maps = [load_map(p) for p in sorted(attn.glob("attnmap_*.json"))]
    if not maps:
        raise click.UsageError(f"no attention map files under {attn}")
    mask = ingest_mask(gt, sheet, class_name)
    raster_arr = load_raster(raster) if raster else None
    reports = evaluate_to_dir(
        maps, mask, class_name, parse_threshold_spec(thresholds), out, raster=raster_arr
    )
    headline = [r for r in reports if r.mode == "down_sampled" and abs(r.threshold - 0.5) < 1e-9]
    for r in headline:
        click.echo(
            f"{r.class_name} down-sampled @0.5: IoU={r.iou:.3f} "
            f"precision={r.precision:.3f} recall={r.recall:.3f}"
        )
    click.echo(f"report written to {out}")


@main.command("serve-review")
@click.option("--labels", type=click.Path(path_type=Path), required=True)
@click.option("--patches", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--attn", type=click.Path(path_type=Path), default=None)
@click.option("--port", type=int, default=8080, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
def serve_review_cmd(labels: Path, patches: Path, attn, port: int, host: str):
    """Serve the label-review API (and the UI build, if present)."""
    import uvicorn

    store = LabelStore(labels)
    manifest = collect_manifests(patches)
    app = create_app(store, manifest, patches, attn_dir=attn)
    ui_dist = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if ui_dist.exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dist, html=True), name="ui")
    uvicorn.run(app, host=host, port=port)


@main.command("pipeline")
@click.option("--config", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--seed", type=int, default=None, help="Override the config seed.")
def pipeline_cmd(config: Path, out: Path, seed):
    """Run the full synthetic pipeline end to end."""
    cfg = load_config(config)
    if seed is not None:
        cfg["seed"] = seed
    report_dir = Pipeline(cfg, out).run()
    click.echo(f"pipeline complete; report at {report_dir / 'report.csv'}")


if __name__ == "__main__":
    sys.exit(main())
