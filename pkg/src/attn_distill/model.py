"""Attention-based binary patch classifier.

Pipeline: convolutional encoder -> token drop -> single-head cross
attention with one learned query -> single-linear-layer head -> sigmoid.
One model is trained per foreground class.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn as nn

from .core import AttnDistillError, InvalidArgument, PatchImage, Rng

CHECKPOINT_VERSION = 1


class InvalidState(AttnDistillError, RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 512          # C, token feature width
    input_px: int = 384          # training input side length
    tile_px: int = 64            # image pixels covered by one token
    drop_p: float = 0.2
    gamma: float = 2.0           # focal loss focusing exponent
    alpha: float = 0.25          # focal loss scale
    class_name: str = "wood"

    @property
    def grid_side(self) -> int:
        return self.input_px // self.tile_px

    @property
    def num_tokens(self) -> int:
        return self.grid_side * self.grid_side

    def encoder_widths(self) -> list[int]:
        # 3 -> C/16 -> C/8 -> C/4 -> C/2 -> C -> C; the default C=512 gives
        # 32, 64, 128, 256, 512, 512.
        c = self.channels
        return [max(c // 16, 4), max(c // 8, 4), max(c // 4, 4), max(c // 2, 4), c, c]


@dataclass
class TokenGrid:
    """Flattened M x N grid of encoder tokens with an active-token mask.

    Dropped positions carry zeroed features and mask=False; positional
    embeddings stay aligned to the original grid positions.
    """

    tokens: torch.Tensor  # L x C
    mask: torch.Tensor    # L bool
    m: int
    n: int

    def __post_init__(self):
        if self.tokens.shape[0] != self.m * self.n:
            raise InvalidArgument(
                f"token count {self.tokens.shape[0]} != {self.m}x{self.n}"
            )

    @property
    def num_active(self) -> int:
        return int(self.mask.sum())


class Classifier(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config.channels
        blocks = []
        in_ch = 3
        for out_ch in config.encoder_widths():
            blocks.append(
                nn.Sequential(
                    nn.Conv2d(in_ch, out_ch, 3, padding=1),
                    nn.ReLU(),
                    nn.Conv2d(out_ch, out_ch, 3, padding=1),
                    nn.ReLU(),
                    nn.MaxPool2d(2, 2),
                )
            )
            in_ch = out_ch
        self.encoder = nn.Sequential(*blocks)
        # ReLU-gain init keeps activation variance stable through the
        # 12-conv stack; the default init starves the deeper blocks
        for mod in self.encoder.modules():
            if isinstance(mod, nn.Conv2d):
                nn.init.kaiming_normal_(mod.weight, nonlinearity="relu")
                nn.init.zeros_(mod.bias)
        L = config.num_tokens
        self.query = nn.Parameter(torch.empty(1, c).normal_(0.0, 0.02))
        self.pos_q = nn.Parameter(torch.empty(1, c).normal_(0.0, 0.02))
        self.pos_kv = nn.Parameter(torch.empty(L, c).normal_(0.0, 0.02))
        self.linear_q = nn.Linear(c, c)
        self.linear_k = nn.Linear(c, c)
        self.linear_v = nn.Linear(c, c)
        self.linear_out = nn.Linear(c, c)
        self.head = nn.Linear(c, 1)
        # forward-pass counter, used by the attention-map extraction audit
        self.attention_forward_count = 0

    # -- batched internals --------------------------------------------------

    def encode_batch(self, images: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) -> (B, L, C) tokens in row-major grid order."""
        if images.shape[-1] % self.config.tile_px or images.shape[-2] % self.config.tile_px:
            raise InvalidArgument(
                f"input dims {tuple(images.shape[-2:])} not divisible by {self.config.tile_px}"
            )
        feat = self.encoder(images)  # B x C x M x N
        b, c, m, n = feat.shape
        return feat.permute(0, 2, 3, 1).reshape(b, m * n, c)

    def attend_batch(
        self, tokens: torch.Tensor, mask: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Cross attention over active tokens.

        tokens: (B, L, C); mask: (B, L) bool. Returns pooled features
        (B, C) and attention weights (B, L), zero at inactive positions.
        """
        if not bool(mask.any(dim=1).all()):
            raise InvalidState("cross attention requires at least one active token")
        self.attention_forward_count += 1
        c = self.config.channels
        q = self.linear_q(self.query + self.pos_q)          # 1 x C
        k = self.linear_k(tokens + self.pos_kv)             # B x L x C
        v = self.linear_v(tokens + self.pos_kv)             # B x L x C
        logits = (k @ q.squeeze(0)) / math.sqrt(c)          # B x L
        logits = logits.masked_fill(~mask, float("-inf"))
        weights = torch.softmax(logits, dim=1)              # B x L, 0 at inactive
        pooled = self.linear_out(weights.unsqueeze(1) @ v).squeeze(1)  # B x C
        return pooled, weights

    def forward(
        self, images: torch.Tensor, keep_mask: Optional[torch.Tensor] = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """(B, 3, H, W) [+ optional (B, L) keep mask with survivor scaling
        already decided by the caller] -> (probabilities (B,), weights (B, L))."""
        tokens = self.encode_batch(images)
        b, L, _ = tokens.shape
        if keep_mask is None:
            mask = torch.ones(b, L, dtype=torch.bool, device=tokens.device)
        else:
            mask = keep_mask
            scale = 1.0 / (1.0 - self.config.drop_p)
            tokens = tokens * mask.unsqueeze(-1) * scale
        pooled, weights = self.attend_batch(tokens, mask)
        probs = torch.sigmoid(self.head(pooled)).squeeze(-1)
        return probs, weights


# -- single-image operations (the library surface) --------------------------


def _image_tensor(image: PatchImage) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(image.pixels.transpose(2, 0, 1)))


def encode(image: PatchImage, model: Classifier) -> TokenGrid:
    """Encode one patch into its token grid (all tokens active)."""
    x = _image_tensor(image).unsqueeze(0)
    tokens = model.encode_batch(x).squeeze(0)
    m = image.height // model.config.tile_px
    n = image.width // model.config.tile_px
    return TokenGrid(tokens=tokens, mask=torch.ones(m * n, dtype=torch.bool), m=m, n=n)


def drop_tokens(grid: TokenGrid, p: float, rng: Rng, training: bool) -> TokenGrid:
    """Bernoulli token drop with inverted-dropout scaling of survivors.

    Identity when training is False or p == 0. If a draw would drop every
    active token, it is redrawn.
    """
    if not (0.0 <= p < 1.0):
        raise InvalidArgument(f"drop probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return grid
    active = grid.mask.numpy()
    L = grid.tokens.shape[0]
    while True:
        keep = rng.bernoulli(1.0 - p, L) & active
        if keep.any():
            break
    keep_t = torch.from_numpy(keep)
    tokens = grid.tokens * keep_t.unsqueeze(-1) * (1.0 / (1.0 - p))
    return TokenGrid(tokens=tokens, mask=keep_t, m=grid.m, n=grid.n)


def cross_attention(grid: TokenGrid, model: Classifier) -> tuple[torch.Tensor, torch.Tensor]:
    """Returns (pooled features 1 x C, attention weights over the L grid
    positions with zeros at inactive ones)."""
    if grid.num_active == 0:
        raise InvalidState("cross attention requires at least one active token")
    if grid.tokens.shape[0] != model.config.num_tokens:
        raise InvalidArgument(
            f"grid has {grid.tokens.shape[0]} tokens, model expects {model.config.num_tokens}"
        )
    pooled, weights = model.attend_batch(grid.tokens.unsqueeze(0), grid.mask.unsqueeze(0))
    return pooled, weights.squeeze(0)


def classify(
    image: PatchImage,
    model: Classifier,
    p: float,
    rng: Optional[Rng],
    training: bool,
) -> tuple[float, torch.Tensor]:
    """Full forward pass; returns (P(foreground), attention weights)."""
    grid = encode(image, model)
    if training and p > 0:
        if rng is None:
            raise InvalidArgument("training-mode classify with p > 0 needs an rng")
        grid = drop_tokens(grid, p, rng, training=True)
    pooled, weights = cross_attention(grid, model)
    prob = torch.sigmoid(model.head(pooled)).squeeze()
    return float(prob.detach()), weights.detach()


def focal_loss(
    prob: torch.Tensor | float,
    target: torch.Tensor | float,
    gamma: float = 2.0,
    alpha: float = 0.25,
    eps: float = 1e-7,
) -> torch.Tensor:
    """-alpha * (1 - p_t)^gamma * log(p_t), p_t = prob if target else 1 - prob.

    alpha multiplies both classes symmetrically, so gamma=0, alpha=1
    reduces to binary cross-entropy.
    """
    prob = torch.as_tensor(prob)
    target = torch.as_tensor(target, dtype=prob.dtype)
    p_t = prob * target + (1.0 - prob) * (1.0 - target)
    p_t = p_t.clamp(eps, 1.0 - eps)
    return -alpha * (1.0 - p_t) ** gamma * torch.log(p_t)


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(model: Classifier, path: str | Path, extra: Optional[dict] = None) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "state_dict": model.state_dict(),
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> Classifier:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise InvalidArgument(f"unsupported checkpoint version: {version}")
    config = ModelConfig(**payload["config"])
    model = Classifier(config)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model
