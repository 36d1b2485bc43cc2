import numpy as np
import pytest
import torch

from attn_distill.core import PatchId, PatchImage
from attn_distill.model import Classifier, ModelConfig


def make_image(seed: int, h: int = 384, w: int = 384, sheet: str = "s", row: int = 0, col: int = 0):
    px = np.random.default_rng(seed).random((h, w, 3)).astype(np.float32)
    return PatchImage(PatchId(sheet, row, col), px)


@pytest.fixture(scope="session")
def tiny_model():
    """Small classifier for shape/behavior tests: C=16, 384 px input."""
    torch.manual_seed(0)
    return Classifier(ModelConfig(channels=16))


@pytest.fixture(scope="session")
def micro_model():
    """Very small classifier on 128 px inputs (L=4)."""
    torch.manual_seed(1)
    return Classifier(ModelConfig(channels=8, input_px=128))
