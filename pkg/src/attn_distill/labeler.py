"""LLM-based coarse labeling: prompt assembly, answer parsing, providers
and a content-addressed response cache."""

from __future__ import annotations

import hashlib
import io
import json
import logging
import os
import re
import threading
import time
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from PIL import Image

from .core import CoarseLabel, ParseError, PatchId, ValidationError
from .tiler import ManifestEntry, load_patch_image

log = logging.getLogger(__name__)

DISPLAY_NAMES = {"wood": "Wood", "settlement": "Settlement"}
SEPARATOR_PX = 16

PROMPT_TEXT = (
    "On the left side is some examples of the symbols of a historical map "
    "including the class Wood and Settlement. On the right side is an image of "
    "historical map patch. For the right image, please answer the following "
    "question with Yes or No and give reasons for the answer:\n"
    "1. Does the image contain Wood?\n"
    "2. Does the image contain Settlement?\n"
    "Formatting the answer with the following structure:\n"
    "1. **Wood?** [Yes/No] : [reason]\n"
    "2. **Settlement?** [Yes/No] : [reason]"
)


@dataclass(frozen=True)
class PromptBundle:
    composite_image: Image.Image
    prompt_text: str
    patch: PatchId

    def content_hash(self) -> str:
        buf = io.BytesIO()
        self.composite_image.save(buf, format="PNG")
        h = hashlib.sha256()
        h.update(self.prompt_text.encode())
        h.update(buf.getvalue())
        return h.hexdigest()


@dataclass(frozen=True)
class LlmAnswer:
    raw_text: str
    parsed: dict[str, tuple[bool, str]]  # class name -> (present, reason)


def build_prompt(patch_pixels: np.ndarray, legend: Image.Image, patch: PatchId) -> PromptBundle:
    """Compose legend | separator | patch side by side."""
    if legend.width == 0 or legend.height == 0:
        raise ValidationError("legend image is empty")
    patch_img = Image.fromarray((np.clip(patch_pixels, 0, 1) * 255).astype(np.uint8))
    height = max(legend.height, patch_img.height)
    composite = Image.new(
        "RGB", (legend.width + SEPARATOR_PX + patch_img.width, height), (255, 255, 255)
    )
    composite.paste(legend.convert("RGB"), (0, 0))
    composite.paste(patch_img, (legend.width + SEPARATOR_PX, 0))
    return PromptBundle(composite_image=composite, prompt_text=PROMPT_TEXT, patch=patch)


_ANSWER_RE = {
    name: re.compile(
        # the lookahead rejects the literal "[Yes/No]" placeholder so an
        # echoed prompt template never parses as an answer
        r"\*\*\s*" + display + r"\s*\?\s*\*\*\s*:?\s*\[?\s*(yes|no)(?![A-Za-z/])\s*\]?\s*:?\s*(.*)",
        re.IGNORECASE,
    )
    for name, display in DISPLAY_NAMES.items()
}


def parse_answer(raw_text: str) -> LlmAnswer:
    """Extract Yes/No plus reason per class; refuses to guess on anything
    that does not match the required answer structure."""
    parsed: dict[str, tuple[bool, str]] = {}
    for class_name, pattern in _ANSWER_RE.items():
        matches = pattern.findall(raw_text)
        if not matches:
            raise ParseError(f"no answer line found for class {class_name!r}", raw_text)
        decisions = {m[0].lower() for m in matches}
        if len(decisions) > 1:
            raise ParseError(f"ambiguous Yes/No for class {class_name!r}", raw_text)
        present = decisions.pop() == "yes"
        reason = matches[0][1].strip().strip('"')
        parsed[class_name] = (present, reason)
    return LlmAnswer(raw_text=raw_text, parsed=parsed)


def format_answer(parsed: dict[str, tuple[bool, str]]) -> str:
    """Render the canonical answer structure (inverse of parse_answer)."""
    lines = []
    for i, (class_name, display) in enumerate(DISPLAY_NAMES.items(), start=1):
        present, reason = parsed[class_name]
        word = "Yes" if present else "No"
        lines.append(f"{i}. **{display}?** {word}: {reason}")
    return "\n".join(lines)


# -- providers ---------------------------------------------------------------


class Provider(ABC):
    """Minimal vision-LLM interface: one image, one question, one answer."""

    @abstractmethod
    def complete(self, image: Image.Image, text: str) -> str: ...


class CallableProvider(Provider):
    """Wraps a function, handy for tests and fault injection."""

    def __init__(self, fn: Callable[[Image.Image, str], str]):
        self.fn = fn
        self.calls = 0

    def complete(self, image: Image.Image, text: str) -> str:
        self.calls += 1
        return self.fn(image, text)


class ReplayProvider(Provider):
    """Serves answers only from a pre-populated cache; never goes out."""

    def complete(self, image: Image.Image, text: str) -> str:
        raise RuntimeError("replay provider has no live backend; response missing from cache")


class OpenAiCompatProvider(Provider):
    """Chat-completions adapter for any OpenAI-compatible endpoint.

    Credentials come from the environment variable named by `api_key_env`.
    """

    def __init__(self, base_url: str, model: str, api_key_env: str = "ATTN_DISTILL_API_KEY"):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env

    def complete(self, image: Image.Image, text: str) -> str:
        import base64

        import requests

        buf = io.BytesIO()
        image.save(buf, format="PNG")
        b64 = base64.b64encode(buf.getvalue()).decode()
        payload = {
            "model": self.model,
            "messages": [
                {
                    "role": "user",
                    "content": [
                        {"type": "text", "text": text},
                        {
                            "type": "image_url",
                            "image_url": {"url": f"data:image/png;base64,{b64}"},
                        },
                    ],
                }
            ],
        }
        headers = {}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        resp = requests.post(
            f"{self.base_url}/chat/completions", json=payload, headers=headers, timeout=120
        )
        resp.raise_for_status()
        return resp.json()["choices"][0]["message"]["content"]


class OracleProvider(Provider):
    """Answers from ground-truth masks, in the canonical answer format.

    Stands in for a live LLM on the synthetic benchmark, where exact
    image-level labels are known by construction.
    """

    def __init__(self, patch_foreground: dict[str, dict[str, bool]]):
        # patch_foreground: patch_id string -> class -> contains-foreground
        self.patch_foreground = patch_foreground
        self._pending: Optional[str] = None
        self.calls = 0

    def set_patch(self, patch_id: str) -> None:
        self._pending = patch_id

    def complete(self, image: Image.Image, text: str) -> str:
        self.calls += 1
        if self._pending is None or self._pending not in self.patch_foreground:
            raise RuntimeError("oracle provider has no ground truth for this patch")
        truth = self.patch_foreground[self._pending]
        parsed = {
            name: (bool(truth.get(name, False)), "synthetic ground truth")
            for name in DISPLAY_NAMES
        }
        return format_answer(parsed)


# -- cache and batch labeling ------------------------------------------------


class ResponseCache:
    """Content-addressed store of raw provider responses.

    Concurrent readers are safe; writes per key go through one lock.
    """

    def __init__(self, cache_dir: str | Path):
        self.dir = Path(cache_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self._write_lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.dir / f"{key}.txt"

    def get(self, key: str) -> Optional[str]:
        path = self._path(key)
        return path.read_text() if path.exists() else None

    def put(self, key: str, raw_text: str) -> None:
        with self._write_lock:
            tmp = self._path(key).with_suffix(".tmp")
            tmp.write_text(raw_text)
            tmp.replace(self._path(key))


@dataclass(frozen=True)
class UnlabeledRecord:
    patch: PatchId
    class_name: str
    reason: str


def label_patches(
    manifest: list[ManifestEntry],
    patches_dir: str | Path,
    legend: Image.Image,
    provider: Provider,
    cache_dir: str | Path,
    concurrency: int = 4,
    retries: int = 2,
    backoff_s: float = 1.0,
) -> tuple[list[CoarseLabel], list[UnlabeledRecord]]:
    """Label every patch in the manifest via the provider, through the cache.

    Cached prompts are never re-queried. Provider or parse failures mark
    the patch unlabeled for both classes; the pipeline continues.
    """
    cache = ResponseCache(cache_dir)
    patches_dir = Path(patches_dir)
    results: dict[PatchId, LlmAnswer | UnlabeledRecord] = {}

    def query(entry: ManifestEntry):
        image = load_patch_image(patches_dir / entry.path, entry.patch)
        bundle = build_prompt(image.pixels, legend, entry.patch)
        key = bundle.content_hash()
        raw = cache.get(key)
        if raw is None:
            if isinstance(provider, OracleProvider):
                provider.set_patch(str(entry.patch))
            last_err: Exception | None = None
            for attempt in range(retries + 1):
                try:
                    raw = provider.complete(bundle.composite_image, bundle.prompt_text)
                    break
                except Exception as e:  # provider/network failure
                    last_err = e
                    if attempt < retries:
                        time.sleep(backoff_s * 2**attempt)
            if raw is None:
                return entry.patch, UnlabeledRecord(
                    entry.patch, "*", f"provider failure: {last_err}"
                )
            cache.put(key, raw)
        try:
            return entry.patch, parse_answer(raw)
        except ParseError as e:
            return entry.patch, UnlabeledRecord(entry.patch, "*", f"parse error: {e}")

    if concurrency > 1 and not isinstance(provider, OracleProvider):
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            for patch, outcome in pool.map(query, manifest):
                results[patch] = outcome
    else:
        for entry in manifest:
            patch, outcome = query(entry)
            results[patch] = outcome

    labels: list[CoarseLabel] = []
    unlabeled: list[UnlabeledRecord] = []
    for entry in manifest:  # deterministic manifest order
        outcome = results[entry.patch]
        if isinstance(outcome, UnlabeledRecord):
            unlabeled.append(outcome)
            continue
        for class_name, (present, reason) in outcome.parsed.items():
            labels.append(
                CoarseLabel(
                    patch=entry.patch,
                    class_name=class_name,
                    present=present,
                    source="llm",
                    reason=reason,
                )
            )
    return labels, unlabeled


# -- label record files -------------------------------------------------------


def label_record(label: CoarseLabel) -> dict:
    return {
        "patch_id": str(label.patch),
        "class": label.class_name,
        "present": label.present,
        "source": label.source,
        "reason": label.reason or "",
    }


def write_labels(
    labels: list[CoarseLabel],
    path: str | Path,
    unlabeled: list[UnlabeledRecord] = (),
) -> None:
    with Path(path).open("w") as f:
        for label in labels:
            f.write(json.dumps(label_record(label), sort_keys=True) + "\n")
        for rec in unlabeled:
            f.write(
                json.dumps(
                    {
                        "patch_id": str(rec.patch),
                        "class": rec.class_name,
                        "present": None,
                        "source": "unlabeled",
                        "reason": rec.reason,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_labels(path: str | Path) -> list[CoarseLabel]:
    """Read label records, skipping unlabeled entries."""
    labels = []
    with Path(path).open() as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            if d.get("present") is None or d.get("source") == "unlabeled":
                continue
            labels.append(
                CoarseLabel(
                    patch=PatchId.parse(d["patch_id"]),
                    class_name=d["class"],
                    present=bool(d["present"]),
                    source=d["source"],
                    reason=d.get("reason") or None,
                )
            )
    return labels


def effective_labels(labels: list[CoarseLabel]) -> dict[tuple[PatchId, str], CoarseLabel]:
    """Resolve duplicates: the latest human label beats any llm label."""
    resolved: dict[tuple[PatchId, str], CoarseLabel] = {}
    for label in labels:
        key = (label.patch, label.class_name)
        prev = resolved.get(key)
        if prev is None or label.source == "human" or prev.source != "human":
            resolved[key] = label
    return resolved


def default_legend(texture=None) -> Image.Image:
    """Small synthetic legend: one wood swatch, one settlement swatch."""
    from . import synth

    tex = texture or synth.TextureConfig()
    size = 128
    full = [(0, 0), (size, 0), (size, size), (0, size)]
    wood_img, _ = synth.generate_sheet(7, size, [("wood", full)], tex)
    set_img, _ = synth.generate_sheet(8, size, [("settlement", full)], tex)
    legend = Image.new("RGB", (size, 2 * size + 8), (255, 255, 255))
    legend.paste(Image.fromarray(wood_img), (0, 0))
    legend.paste(Image.fromarray(set_img), (0, size + 8))
    return legend
