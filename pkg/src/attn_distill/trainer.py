"""Training loop: one binary classifier per foreground class."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .core import CoarseLabel, InvalidArgument, PatchImage, Rng
from .labeler import effective_labels
from .model import Classifier, ModelConfig, focal_loss, save_checkpoint
from .tiler import ManifestEntry, load_patch_image

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    lr: float = 5e-4
    warmup_epochs: int = 5
    batch_size: int = 16
    drop_p: float = 0.2
    gamma: float = 2.0
    alpha: float = 0.25
    channels: int = 512
    input_px: int = 384
    tile_px: int = 64
    seed: int = 0
    val_fraction: float = 0.1
    adam_betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.0
    keep_epoch_checkpoints: bool = False


def warmup_lr(epoch: int, target_lr: float, warmup_epochs: int) -> float:
    """Linear ramp from 0 at epoch 0 to the target rate at the end of
    warm-up, constant thereafter."""
    if warmup_epochs <= 0:
        return target_lr
    return target_lr * min(epoch / warmup_epochs, 1.0)


def build_dataset(
    manifest: list[ManifestEntry],
    patches_dir: str | Path,
    labels: list[CoarseLabel],
    class_name: str,
) -> list[tuple[PatchImage, int]]:
    """Pair patch images with their effective label for one class.

    Human labels override llm ones; patches without a label are skipped.
    """
    resolved = effective_labels(labels)
    patches_dir = Path(patches_dir)
    dataset = []
    for entry in manifest:
        label = resolved.get((entry.patch, class_name))
        if label is None:
            continue
        image = load_patch_image(patches_dir / entry.path, entry.patch)
        dataset.append((image, int(label.present)))
    return dataset


def _stratified_split(n_items: int, targets: list[int], val_fraction: float, rng: Rng):
    by_class: dict[int, list[int]] = {}
    for i, t in enumerate(targets):
        by_class.setdefault(t, []).append(i)
    train_idx, val_idx = [], []
    for cls in sorted(by_class):
        idx = np.array(by_class[cls])
        perm = rng.integers(0, 2**31 - 1, len(idx)).argsort()
        idx = idx[perm]
        n_val = int(round(val_fraction * len(idx)))
        val_idx.extend(idx[:n_val].tolist())
        train_idx.extend(idx[n_val:].tolist())
    if not train_idx:
        train_idx = list(range(n_items))
    if not val_idx:
        val_idx = list(train_idx)
    return sorted(train_idx), sorted(val_idx)


def _drop_masks(batch: int, L: int, p: float, rng: Rng) -> torch.Tensor:
    rows = []
    for _ in range(batch):
        while True:
            keep = rng.bernoulli(1.0 - p, L)
            if keep.any():
                break
        rows.append(keep)
    return torch.from_numpy(np.stack(rows))


def train(
    dataset: list[tuple[PatchImage, int]],
    class_name: str,
    config: TrainConfig,
    out_dir: str | Path,
) -> Path:
    """Train a classifier for one class; returns the best-checkpoint path.

    Writes `last.ckpt` every epoch, `best.ckpt` on validation-loss
    improvement, and a line-delimited metrics log.
    """
    if not dataset:
        raise InvalidArgument("training dataset is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    targets = [t for _, t in dataset]
    if len(set(targets)) == 1:
        log.warning("all labels for class %r are %d; training proceeds", class_name, targets[0])

    torch.manual_seed(config.seed)
    rng = Rng(config.seed)
    model_cfg = ModelConfig(
        channels=config.channels,
        input_px=config.input_px,
        tile_px=config.tile_px,
        drop_p=config.drop_p,
        gamma=config.gamma,
        alpha=config.alpha,
        class_name=class_name,
    )
    model = Classifier(model_cfg)
    optim = torch.optim.Adam(
        model.parameters(),
        lr=config.lr,
        betas=config.adam_betas,
        weight_decay=config.weight_decay,
    )

    images = torch.stack(
        [torch.from_numpy(np.ascontiguousarray(im.pixels.transpose(2, 0, 1))) for im, _ in dataset]
    )
    target_t = torch.tensor(targets, dtype=torch.float32)
    train_idx, val_idx = _stratified_split(len(dataset), targets, config.val_fraction, rng)
    L = model_cfg.num_tokens

    best_val = float("inf")
    best_path = out_dir / "best.ckpt"
    metrics_path = out_dir / "metrics.jsonl"
    with metrics_path.open("w") as metrics_f:
        for epoch in range(config.epochs):
            lr = warmup_lr(epoch, config.lr, config.warmup_epochs)
            for group in optim.param_groups:
                group["lr"] = lr

            model.train()
            order = np.array(train_idx)[
                rng.integers(0, 2**31 - 1, len(train_idx)).argsort()
            ]
            epoch_loss, epoch_correct = 0.0, 0
            for start in range(0, len(order), config.batch_size):
                idx = order[start : start + config.batch_size].tolist()
                batch_images = images[idx]
                batch_targets = target_t[idx]
                keep = (
                    _drop_masks(len(idx), L, config.drop_p, rng)
                    if config.drop_p > 0
                    else None
                )
                probs, _ = model(batch_images, keep)
                loss = focal_loss(probs, batch_targets, config.gamma, config.alpha).mean()
                if not torch.isfinite(loss):
                    raise RuntimeError(
                        f"non-finite loss at epoch {epoch} (lr={lr:.3g}); aborting"
                    )
                optim.zero_grad()
                loss.backward()
                optim.step()
                epoch_loss += float(loss.detach()) * len(idx)
                epoch_correct += int(((probs > 0.5).float() == batch_targets).sum())

            model.eval()
            with torch.no_grad():
                val_probs, _ = model(images[val_idx])
                val_targets = target_t[val_idx]
                val_loss = float(
                    focal_loss(val_probs, val_targets, config.gamma, config.alpha).mean()
                )
                val_acc = float(((val_probs > 0.5).float() == val_targets).float().mean())

            record = {
                "epoch": epoch,
                "lr": lr,
                "train_loss": epoch_loss / len(train_idx),
                "train_acc": epoch_correct / len(train_idx),
                "val_loss": val_loss,
                "val_acc": val_acc,
            }
            metrics_f.write(json.dumps(record, sort_keys=True) + "\n")
            metrics_f.flush()

            extra = {"epoch": epoch, "train_config": asdict(config)}
            save_checkpoint(model, out_dir / "last.ckpt", extra)
            if config.keep_epoch_checkpoints:
                save_checkpoint(model, out_dir / f"epoch_{epoch:04d}.ckpt", extra)
            if val_loss < best_val:
                best_val = val_loss
                save_checkpoint(model, best_path, extra)

    if not best_path.exists():
        save_checkpoint(model, best_path, {"epoch": config.epochs - 1})
    return best_path


def evaluate_classification(
    model: Classifier, dataset: list[tuple[PatchImage, int]]
) -> dict[str, float]:
    """Image-level accuracy/precision/recall at a 0.5 probability cut."""
    if not dataset:
        raise InvalidArgument("evaluation dataset is empty")
    model.eval()
    images = torch.stack(
        [torch.from_numpy(np.ascontiguousarray(im.pixels.transpose(2, 0, 1))) for im, _ in dataset]
    )
    targets = np.array([t for _, t in dataset], dtype=bool)
    with torch.no_grad():
        probs, _ = model(images)
    preds = probs.numpy() > 0.5
    tp = int(np.sum(preds & targets))
    fp = int(np.sum(preds & ~targets))
    fn = int(np.sum(~preds & targets))
    return {
        "accuracy": float(np.mean(preds == targets)),
        "precision": tp / (tp + fp) if tp + fp else (1.0 if fn == 0 else 0.0),
        "recall": tp / (tp + fn) if tp + fn else (1.0 if fp == 0 else 0.0),
    }
