"""Procedural game-like clip corpus with graded synthetic degradations.

Every content gets one pristine clip (gradient background with scrolling
texture, moving sprites, a HUD strip with text). Each of its clips is that
source with a single degradation at some severity in [0, 1], and carries
pseudo-MOS ``1 + 4 * (1 - severity)``.

Layout::

    out_dir/manifest.jsonl
    out_dir/content_XX/reference/frame_NNNN.png
    out_dir/content_XX/clip_YY/frame_NNNN.png
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont
from scipy.fft import dctn, idctn
from scipy.ndimage import gaussian_filter

from .core import Manifest, VideoItem, save_manifest

DEGRADATIONS = ("block", "blur", "noise")
MANIFEST_NAME = "manifest.jsonl"

# JPEG Annex K luminance table
_JPEG_LUMA = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


@dataclass
class SynthConfig:
    num_contents: int = 12
    clips_per_content: int = 8
    frames_per_clip: int = 16
    levels: list = field(default_factory=lambda: [0.0, 0.14, 0.28, 0.42, 0.56, 0.7, 0.84, 0.98])
    rng_seed: int = 0
    height: int = 72
    width: int = 128
    # uniform per-clip perturbation of the nominal level, so that hard pairs exist
    jitter: float = 0.05

    def validate(self):
        if self.num_contents < 1 or self.clips_per_content < 1 or self.frames_per_clip < 1:
            raise ValueError("num_contents, clips_per_content and frames_per_clip must be >= 1")
        if not self.levels or any(not 0.0 <= s <= 1.0 for s in self.levels):
            raise ValueError("levels must be a non-empty list of severities in [0, 1]")
        if self.height < 8 or self.width < 8:
            raise ValueError("frames must be at least 8x8")
        if not 0.0 <= self.jitter <= 1.0:
            raise ValueError("jitter must lie in [0, 1]")


def severity_to_mos(severity: float) -> float:
    return 1.0 + 4.0 * (1.0 - float(severity))


class _Scene:
    def __init__(self, rng: np.random.Generator, h: int, w: int, n_frames: int):
        self.h, self.w, self.n = h, w, n_frames
        self.c0, self.c1 = rng.uniform(0.05, 0.95, 3), rng.uniform(0.05, 0.95, 3)
        self.angle = rng.uniform(0, 2 * np.pi)
        self.freq = rng.uniform(0.08, 0.35, 2)
        self.scroll = rng.uniform(-2.0, 2.0, 2)
        self.tex_amp = rng.uniform(0.05, 0.2)
        n_sprites = int(rng.integers(3, 7))
        self.sprites = []
        for _ in range(n_sprites):
            size = rng.uniform(0.1, 0.3) * min(h, w)
            self.sprites.append(dict(
                pos=rng.uniform(0, 1, 2) * (h, w),
                vel=rng.uniform(-3, 3, 2),
                size=size,
                color=rng.uniform(0, 1, 3),
                round=bool(rng.random() < 0.5),
                stripe=rng.uniform(0.3, 1.2),
            ))
        self.hud_color = rng.uniform(0.0, 0.25, 3)
        self.bar_color = rng.uniform(0.5, 1.0, 3)
        self.score0 = int(rng.integers(0, 5000))
        self.yy, self.xx = np.mgrid[0:h, 0:w].astype(np.float64)

    def render(self, t: int) -> np.ndarray:
        h, w, yy, xx = self.h, self.w, self.yy, self.xx
        ramp = (np.cos(self.angle) * xx / w + np.sin(self.angle) * yy / h)
        ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-9)
        img = self.c0 * (1 - ramp[..., None]) + self.c1 * ramp[..., None]
        tex = np.sin(self.freq[0] * (xx + self.scroll[1] * t)) * np.cos(self.freq[1] * (yy + self.scroll[0] * t))
        img = img + self.tex_amp * tex[..., None]
        for s in self.sprites:
            cy = (s["pos"][0] + s["vel"][0] * t) % h
            cx = (s["pos"][1] + s["vel"][1] * t) % w
            r = s["size"] / 2
            if s["round"]:
                mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
            else:
                mask = (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r)
            stripes = 0.75 + 0.25 * np.sign(np.sin(s["stripe"] * (xx + yy)))
            img = np.where(mask[..., None], s["color"] * stripes[..., None], img)
        img = np.clip(img, 0.0, 1.0)
        return self._hud(img, t)

    def _hud(self, img: np.ndarray, t: int) -> np.ndarray:
        h, w = self.h, self.w
        pil = Image.fromarray(np.round(img * 255).astype(np.uint8))
        draw = ImageDraw.Draw(pil)
        strip = max(6, h // 8)
        draw.rectangle([0, 0, w - 1, strip], fill=tuple(int(v * 255) for v in self.hud_color))
        frac = 0.3 + 0.6 * (0.5 + 0.5 * np.sin(0.3 * t + self.score0))
        draw.rectangle([2, 2, int(2 + frac * (w // 3)), strip - 2],
                       fill=tuple(int(v * 255) for v in self.bar_color))
        draw.text((w // 2, 0), f"{self.score0 + 7 * t:05d}", fill=(255, 255, 255),
                  font=ImageFont.load_default())
        return np.asarray(pil, dtype=np.uint8)


def degrade(frame: np.ndarray, kind: str, severity: float, rng: np.random.Generator) -> np.ndarray:
    """Apply one degradation to a uint8 HxWx3 frame; severity 0 is the identity."""
    if severity <= 0.0:
        return frame.copy()
    x = frame.astype(np.float64)
    if kind == "blur":
        x = gaussian_filter(x, sigma=(2.5 * severity, 2.5 * severity, 0), mode="reflect")
    elif kind == "noise":
        x = x + rng.normal(0.0, 60.0 * severity, size=x.shape)
    elif kind == "block":
        x = _block_quantize(x, 0.05 + 10.0 * severity)
    else:
        raise ValueError(f"unknown degradation {kind!r}")
    return np.clip(np.round(x), 0, 255).astype(np.uint8)


def _block_quantize(x: np.ndarray, scale: float) -> np.ndarray:
    h, w, c = x.shape
    ph, pw = (-h) % 8, (-w) % 8
    xp = np.pad(x, ((0, ph), (0, pw), (0, 0)), mode="edge") - 128.0
    H, W = xp.shape[:2]
    blocks = xp.reshape(H // 8, 8, W // 8, 8, c).transpose(0, 2, 4, 1, 3)
    coef = dctn(blocks, axes=(-2, -1), norm="ortho")
    q = np.maximum(_JPEG_LUMA * scale, 1.0)
    coef = np.round(coef / q) * q
    rec = idctn(coef, axes=(-2, -1), norm="ortho")
    rec = rec.transpose(0, 3, 1, 4, 2).reshape(H, W, c) + 128.0
    return rec[:h, :w]


def _save(arr: np.ndarray, path: Path):
    Image.fromarray(arr).save(path, format="PNG", optimize=False, compress_level=6)


def generate_synth_corpus(cfg: SynthConfig, out_dir) -> Manifest:
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    root_ss = np.random.SeedSequence(cfg.rng_seed)
    content_seqs = root_ss.spawn(cfg.num_contents)
    items = []
    for c, css in enumerate(content_seqs):
        scene_ss, clip_ss = css.spawn(2)
        scene = _Scene(np.random.default_rng(scene_ss), cfg.height, cfg.width, cfg.frames_per_clip)
        frames = [scene.render(t) for t in range(cfg.frames_per_clip)]
        cdir = out_dir / f"content_{c:02d}"
        ref_dir = cdir / "reference"
        ref_dir.mkdir(parents=True, exist_ok=True)
        for t, fr in enumerate(frames):
            _save(fr, ref_dir / f"frame_{t:04d}.png")
        for k, kss in enumerate(clip_ss.spawn(cfg.clips_per_content)):
            rng = np.random.default_rng(kss)
            kind = DEGRADATIONS[(k + c) % len(DEGRADATIONS)]
            level = cfg.levels[k % len(cfg.levels)]
            severity = float(np.clip(level + rng.uniform(-cfg.jitter, cfg.jitter), 0.0, 1.0))
            severity = round(severity, 4)
            kdir = cdir / f"clip_{k:02d}"
            kdir.mkdir(exist_ok=True)
            for t, fr in enumerate(frames):
                _save(degrade(fr, kind, severity, rng), kdir / f"frame_{t:04d}.png")
            items.append(VideoItem(
                id=f"c{c:02d}_k{k:02d}",
                content_id=f"content_{c:02d}",
                codec=kind,
                frame_source=f"content_{c:02d}/clip_{k:02d}",
                mos_raw=round(severity_to_mos(severity), 6),
                resolution=f"{cfg.height}x{cfg.width}",
                fps=30.0,
                duration_s=round(cfg.frames_per_clip / 30.0, 6),
                reference_source=f"content_{c:02d}/reference",
            ))
    manifest = Manifest(tuple(items), root=out_dir)
    save_manifest(manifest, out_dir / MANIFEST_NAME)
    return manifest


def corpus_hash(out_dir) -> str:
    """sha256 over every file under ``out_dir`` (relative path and bytes)."""
    out_dir = Path(out_dir)
    h = hashlib.sha256()
    for p in sorted(q for q in out_dir.rglob("*") if q.is_file()):
        h.update(p.relative_to(out_dir).as_posix().encode())
        h.update(b"\0")
        h.update(p.read_bytes())
    return h.hexdigest()
