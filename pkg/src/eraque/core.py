"""Shared domain types: video items, manifests, score normalization, pairs."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

SCHEMA_VERSION = 1
MOS_MIN, MOS_MAX = 1.0, 5.0

REQUIRED_FIELDS = ("id", "content_id", "codec", "frame_source", "mos_raw")
OPTIONAL_FIELDS = ("resolution", "bitrate_kbps", "fps", "duration_s", "reference_source")


class ManifestError(ValueError):
    """Invalid manifest content. ``item_id`` names the offending record when known."""

    def __init__(self, message, item_id=None):
        super().__init__(message if item_id is None else f"{item_id}: {message}")
        self.item_id = item_id


def normalize_mos(raw: float, item_id: str | None = None) -> float:
    """Map an ACR score in [1, 5] onto [0, 1] using the fixed scale endpoints."""
    raw = float(raw)
    if not MOS_MIN <= raw <= MOS_MAX:
        raise ManifestError(f"mos_raw {raw} outside [{MOS_MIN}, {MOS_MAX}]", item_id)
    return (raw - MOS_MIN) / (MOS_MAX - MOS_MIN)


def denormalize_mos(norm: float) -> float:
    return MOS_MIN + (MOS_MAX - MOS_MIN) * float(norm)


def enumerate_pairs(n: int) -> list[tuple[int, int]]:
    """All unordered index pairs ``(i, j)`` with ``i < j``, lexicographic."""
    return list(combinations(range(max(n, 0)), 2))


@dataclass(frozen=True)
class VideoItem:
    id: str
    content_id: str
    codec: str
    frame_source: str
    mos_raw: float
    resolution: str | None = None
    bitrate_kbps: float | None = None
    fps: float | None = None
    duration_s: float | None = None
    # pristine frames for full-reference baselines, when available
    reference_source: str | None = None

    def __post_init__(self):
        if not self.id:
            raise ManifestError("empty id")
        if not self.content_id:
            raise ManifestError("empty content_id", self.id)
        normalize_mos(self.mos_raw, self.id)

    @property
    def mos_norm(self) -> float:
        return normalize_mos(self.mos_raw, self.id)

    def to_record(self) -> dict:
        rec = {k: getattr(self, k) for k in REQUIRED_FIELDS}
        rec["mos_raw"] = float(rec["mos_raw"])
        for k in OPTIONAL_FIELDS:
            v = getattr(self, k)
            if v is not None:
                rec[k] = v
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "VideoItem":
        item_id = rec.get("id")
        missing = [k for k in REQUIRED_FIELDS if k not in rec]
        if missing:
            raise ManifestError(f"missing fields {missing}", item_id)
        unknown = set(rec) - set(REQUIRED_FIELDS) - set(OPTIONAL_FIELDS)
        if unknown:
            raise ManifestError(f"unknown fields {sorted(unknown)}", item_id)
        try:
            mos = float(rec["mos_raw"])
        except (TypeError, ValueError):
            raise ManifestError(f"mos_raw not numeric: {rec['mos_raw']!r}", item_id) from None
        return cls(**{**rec, "id": str(rec["id"]), "content_id": str(rec["content_id"]),
                      "codec": str(rec["codec"]), "frame_source": str(rec["frame_source"]),
                      "mos_raw": mos})


@dataclass(frozen=True)
class Manifest:
    """Ordered collection of video items.

    ``root`` is the directory relative ``frame_source`` paths are resolved
    against; it is not serialized.
    """

    items: tuple[VideoItem, ...] = ()
    schema_version: int = SCHEMA_VERSION
    root: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        seen = set()
        for it in self.items:
            if it.id in seen:
                raise ManifestError("duplicate id", it.id)
            seen.add(it.id)

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def by_id(self) -> dict[str, VideoItem]:
        return {it.id: it for it in self.items}

    def subset(self, ids) -> "Manifest":
        wanted = set(ids)
        return Manifest(tuple(it for it in self.items if it.id in wanted),
                        self.schema_version, self.root)

    def content_ids(self) -> list[str]:
        return sorted({it.content_id for it in self.items})

    def resolve(self, path: str | None) -> Path | None:
        if path is None:
            return None
        p = Path(path)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p

    def source_path(self, item: VideoItem) -> Path:
        return self.resolve(item.frame_source)

    def reference_path(self, item: VideoItem) -> Path | None:
        return self.resolve(item.reference_source)

    def dumps(self) -> str:
        """Canonical text form: a header line, then one JSON record per item."""
        lines = [json.dumps({"schema_version": self.schema_version}, sort_keys=True)]
        lines += [json.dumps(it.to_record(), sort_keys=True) for it in self.items]
        return "\n".join(lines) + "\n"


def save_manifest(manifest: Manifest, path) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(manifest.dumps(), encoding="utf-8")
    os.replace(tmp, path)
    return path


def loads_manifest(text: str, root=None, check_sources=True) -> Manifest:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ManifestError("empty manifest (no header line)")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ManifestError(f"bad header line: {exc}") from None
    if not isinstance(header, dict) or "schema_version" not in header:
        raise ManifestError("header line must carry schema_version")
    version = int(header["schema_version"])
    if version > SCHEMA_VERSION:
        raise ManifestError(f"schema_version {version} newer than supported {SCHEMA_VERSION}")
    items = []
    for lineno, ln in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(ln)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"line {lineno}: {exc}") from None
        if not isinstance(rec, dict):
            raise ManifestError(f"line {lineno}: record is not an object")
        items.append(VideoItem.from_record(rec))
    manifest = Manifest(tuple(items), version, Path(root) if root is not None else None)
    if check_sources:
        for it in manifest.items:
            if not manifest.source_path(it).exists():
                raise ManifestError(f"frame_source not found: {it.frame_source}", it.id)
    return manifest


def load_manifest(path, check_sources=True) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    return loads_manifest(path.read_text(encoding="utf-8"), root=path.parent,
                          check_sources=check_sources)
