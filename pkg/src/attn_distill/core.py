"""Shared domain types, grid geometry and deterministic randomness."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

TILE_PX = 64
PATCH_PX = 384

CLASS_NAMES = ("wood", "settlement")


class AttnDistillError(Exception):
    """Base class for toolkit errors."""


class InvalidArgument(AttnDistillError, ValueError):
    pass


class ValidationError(AttnDistillError, ValueError):
    pass


class FormatError(AttnDistillError, ValueError):
    pass


class ParseError(AttnDistillError, ValueError):
    """Raised when an LLM answer cannot be parsed. Carries the raw text."""

    def __init__(self, message: str, raw_text: str = ""):
        super().__init__(message)
        self.raw_text = raw_text


def normalize_class_name(name: str) -> str:
    key = name.strip().lower()
    if key not in CLASS_NAMES:
        raise InvalidArgument(f"unknown class name: {name!r} (expected one of {CLASS_NAMES})")
    return key


class PatchId(NamedTuple):
    sheet: str
    row: int
    col: int

    def __str__(self) -> str:
        return f"{self.sheet}_{self.row}_{self.col}"

    @classmethod
    def parse(cls, s: str) -> "PatchId":
        parts = s.rsplit("_", 2)
        if len(parts) != 3:
            raise InvalidArgument(f"malformed patch id: {s!r}")
        sheet, row, col = parts
        try:
            return cls(sheet, int(row), int(col))
        except ValueError as e:
            raise InvalidArgument(f"malformed patch id: {s!r}") from e


class Rect(NamedTuple):
    """Axis-aligned pixel rectangle: top-left (y0, x0), size (h, w)."""

    y0: int
    x0: int
    h: int
    w: int


@dataclass(frozen=True)
class PatchImage:
    """A cropped image patch with channel values normalized to [0, 1]."""

    id: PatchId
    pixels: np.ndarray  # H x W x 3, float32 in [0, 1]

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValidationError(f"patch pixels must be HxWx3, got {px.shape}")
        h, w = px.shape[:2]
        if h % TILE_PX != 0 or w % TILE_PX != 0:
            raise ValidationError(f"patch dims must be divisible by {TILE_PX}, got {h}x{w}")
        if px.size and (px.min() < 0.0 or px.max() > 1.0):
            raise ValidationError("patch channel values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class CoarseLabel:
    """Binary image-level label for one patch and one class."""

    patch: PatchId
    class_name: str
    present: bool
    source: str  # "llm" | "human"
    reason: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "class_name", normalize_class_name(self.class_name))
        if self.source not in ("llm", "human"):
            raise ValidationError(f"label source must be llm or human, got {self.source!r}")


@dataclass(frozen=True)
class AttentionMap:
    """Per-token attention weights for one patch; each weight covers a 64 px tile."""

    patch: PatchId
    class_name: str
    weights: np.ndarray  # M x N floats in [0, 1]
    token_pixels: int = TILE_PX

    def __post_init__(self):
        w = self.weights
        if w.ndim != 2:
            raise ValidationError(f"attention weights must be MxN, got shape {w.shape}")
        if w.size and (w.min() < 0.0 or w.max() > 1.0):
            raise ValidationError("attention weights must lie in [0, 1]")


@dataclass(frozen=True)
class GroundTruthMask:
    """Full-resolution boolean foreground mask for one sheet and one class."""

    sheet: str
    class_name: str
    mask: np.ndarray  # H_s x W_s bool

    def __post_init__(self):
        if self.mask.ndim != 2 or self.mask.dtype != np.bool_:
            raise ValidationError("ground-truth mask must be a 2-D boolean array")


@dataclass
class Rng:
    """Seeded random stream with platform-stable draws (PCG64)."""

    seed: int
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def bernoulli(self, p_true: float, n: int) -> np.ndarray:
        """n independent draws, each True with probability p_true."""
        return self._gen.random(n) < p_true

    def normal(self, loc: float, scale: float, shape) -> np.ndarray:
        return self._gen.normal(loc, scale, shape)

    def uniform(self, low: float, high: float, shape=None) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size)

    def spawn(self) -> "Rng":
        """Derive an independent child stream (deterministic given self)."""
        return Rng(int(self._gen.integers(0, 2**63 - 1)))


def tile_grid(height_px: int, width_px: int, tile: int) -> list[tuple[int, int, Rect]]:
    """All full tiles of the given size, row-major; partial edge tiles dropped."""
    if tile <= 0:
        raise InvalidArgument(f"tile size must be positive, got {tile}")
    if height_px <= 0 or width_px <= 0:
        raise InvalidArgument(f"dimensions must be positive, got {height_px}x{width_px}")
    rows = height_px // tile
    cols = width_px // tile
    return [
        (r, c, Rect(r * tile, c * tile, tile, tile))
        for r in range(rows)
        for c in range(cols)
    ]
