"""HTTP service for the human label-review workflow.

Serves patch thumbnails with their coarse labels, persists one-click
corrections to an append-only store, and exports effective labels in the
same line-delimited schema the labeler emits.
"""

from __future__ import annotations

import io
import json
import os
import threading
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, PlainTextResponse, Response
from pydantic import BaseModel

from .core import CLASS_NAMES, CoarseLabel, PatchId
from .labeler import effective_labels, label_record
from .tiler import ManifestEntry, load_patch_image, read_manifest
from .viz import overlay_on_raster


class LabelStore:
    """Append-only label history in one JSONL file.

    The effective label per (patch, class) is the latest human record if
    any, else the latest llm record. Writes are serialized and fsynced
    before they are acknowledged.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._history: list[CoarseLabel] = []
        if self.path.exists():
            with self.path.open() as f:
                for line in f:
                    line = line.strip()
                    if not line:
                        continue
                    d = json.loads(line)
                    if d.get("present") is None or d.get("source") == "unlabeled":
                        continue
                    self._history.append(
                        CoarseLabel(
                            patch=PatchId.parse(d["patch_id"]),
                            class_name=d["class"],
                            present=bool(d["present"]),
                            source=d["source"],
                            reason=d.get("reason") or None,
                        )
                    )

    def history(self) -> list[CoarseLabel]:
        return list(self._history)

    def effective(self) -> dict[tuple[PatchId, str], CoarseLabel]:
        return effective_labels(self._history)

    def set_human_label(self, patch: PatchId, class_name: str, present: bool) -> CoarseLabel:
        with self._lock:
            current = self.effective().get((patch, class_name))
            if current is not None and current.source == "human" and current.present == present:
                return current  # idempotent repeat
            label = CoarseLabel(patch=patch, class_name=class_name, present=present, source="human")
            with self.path.open("a") as f:
                f.write(json.dumps(label_record(label), sort_keys=True) + "\n")
                f.flush()
                os.fsync(f.fileno())
            self._history.append(label)
            return label

    def export_lines(self) -> list[str]:
        resolved = self.effective()
        keys = sorted(resolved, key=lambda k: (k[0].sheet, k[0].row, k[0].col, k[1]))
        return [json.dumps(label_record(resolved[k]), sort_keys=True) for k in keys]


class LabelBody(BaseModel):
    present: bool


def _label_payload(label: Optional[CoarseLabel]) -> dict:
    if label is None:
        return {"present": None, "source": None, "reason": None}
    return {"present": label.present, "source": label.source, "reason": label.reason}


def create_app(
    store: LabelStore,
    manifest: list[ManifestEntry],
    patches_dir: str | Path,
    attn_dir: Optional[str | Path] = None,
) -> FastAPI:
    app = FastAPI(title="attn-distill review")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    patches_dir = Path(patches_dir)
    attn_dir = Path(attn_dir) if attn_dir else None
    by_patch = {entry.patch: entry for entry in manifest}
    overlay_cache: dict[tuple[str, str], bytes] = {}

    @app.exception_handler(RequestValidationError)
    async def bad_request(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    def _require_patch(patch_id: str) -> ManifestEntry:
        try:
            patch = PatchId.parse(patch_id)
        except Exception:
            raise HTTPException(status_code=404, detail=f"unknown patch: {patch_id}")
        entry = by_patch.get(patch)
        if entry is None:
            raise HTTPException(status_code=404, detail=f"unknown patch: {patch_id}")
        return entry

    def _require_class(class_name: str) -> str:
        key = class_name.strip().lower()
        if key not in CLASS_NAMES:
            raise HTTPException(status_code=404, detail=f"unknown class: {class_name}")
        return key

    @app.get("/sheets")
    def list_sheets():
        sheets: dict[str, list[ManifestEntry]] = {}
        for entry in manifest:
            sheets.setdefault(entry.patch.sheet, []).append(entry)
        resolved = store.effective()
        human_count: dict[str, int] = {}
        for (patch, _cls), label in resolved.items():
            if label.source == "human":
                human_count[patch.sheet] = human_count.get(patch.sheet, 0) + 1
        out = []
        for sheet in sorted(sheets):
            entries = sheets[sheet]
            total_slots = len(entries) * len(CLASS_NAMES)
            covered = sum(
                1
                for e in entries
                for cls in CLASS_NAMES
                if (e.patch, cls) in resolved
            )
            out.append(
                {
                    "sheet": sheet,
                    "patch_count": len(entries),
                    "label_count": covered,
                    "coverage": covered / total_slots if total_slots else 0.0,
                    "human_overrides": human_count.get(sheet, 0),
                }
            )
        return out

    @app.get("/sheets/{sheet}/patches")
    def list_patches(
        sheet: str,
        class_name: str = Query("wood", alias="class"),
        page: int = 1,
        page_size: int = 50,
    ):
        cls = _require_class(class_name)
        entries = [e for e in manifest if e.patch.sheet == sheet]
        if not entries:
            raise HTTPException(status_code=404, detail=f"unknown sheet: {sheet}")
        entries.sort(key=lambda e: (e.patch.row, e.patch.col))
        resolved = store.effective()
        start = (page - 1) * page_size
        items = []
        for entry in entries[start : start + page_size]:
            label = resolved.get((entry.patch, cls))
            items.append(
                {
                    "patch_id": str(entry.patch),
                    "row": entry.patch.row,
                    "col": entry.patch.col,
                    "image_url": f"/patches/{entry.patch}/image",
                    "label": _label_payload(label),
                }
            )
        return {"sheet": sheet, "class": cls, "page": page, "page_size": page_size,
                "total": len(entries), "items": items}

    @app.post("/patches/{patch_id}/labels/{class_name}")
    def set_label(patch_id: str, class_name: str, body: LabelBody):
        entry = _require_patch(patch_id)
        cls = _require_class(class_name)
        label = store.set_human_label(entry.patch, cls, body.present)
        return label_record(label)

    @app.get("/export/labels")
    def export_labels():
        lines = store.export_lines()
        text = "\n".join(lines)
        return PlainTextResponse(text + "\n" if text else "")

    @app.get("/patches/{patch_id}/image")
    def patch_image(patch_id: str):
        entry = _require_patch(patch_id)
        data = (patches_dir / entry.path).read_bytes()
        return Response(content=data, media_type="image/png",
                        headers={"Cache-Control": "public, max-age=86400"})

    @app.get("/patches/{patch_id}/overlay/{class_name}")
    def patch_overlay(patch_id: str, class_name: str):
        entry = _require_patch(patch_id)
        cls = _require_class(class_name)
        key = (patch_id, cls)
        if key not in overlay_cache:
            if attn_dir is None:
                raise HTTPException(status_code=404, detail="no attention maps configured")
            map_path = attn_dir / f"attnmap_{patch_id}_{cls}.json"
            if not map_path.exists():
                raise HTTPException(status_code=404, detail="no attention map for this patch")
            from .attnmap import load_map

            map_ = load_map(map_path)
            image = load_patch_image(patches_dir / entry.path, entry.patch)
            raster = (image.pixels * 255).astype(np.uint8)
            buf = io.BytesIO()
            overlay_on_raster(raster, map_.weights).save(buf, format="PNG")
            overlay_cache[key] = buf.getvalue()
        return Response(content=overlay_cache[key], media_type="image/png",
                        headers={"Cache-Control": "public, max-age=3600"})

    return app


def collect_manifests(patches_root: str | Path) -> list[ManifestEntry]:
    """Merge every manifest.jsonl under the root; tile paths become
    relative to the root."""
    patches_root = Path(patches_root)
    entries: list[ManifestEntry] = []
    for manifest_path in sorted(patches_root.rglob("manifest.jsonl")):
        rel_dir = manifest_path.parent.relative_to(patches_root)
        for entry in read_manifest(manifest_path):
            entries.append(
                ManifestEntry(patch=entry.patch, rect=entry.rect,
                              path=str(rel_dir / entry.path))
            )
    return entries
