"""Frame loading, letterboxing and training-time augmentation.

Frames are float32 tensors shaped ``[3, H, W]`` with values in ``[0, 1]``.
"""
from __future__ import annotations

import logging
import shlex
import subprocess
import tempfile
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

log = logging.getLogger(__name__)

CANVAS_1080 = (1080, 1920)
CROP = (540, 960)
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".tif", ".tiff"}


class FrameSourceError(RuntimeError):
    def __init__(self, message, item_id=None):
        super().__init__(message if item_id is None else f"{item_id}: {message}")
        self.item_id = item_id


def check_frame(frame: torch.Tensor) -> torch.Tensor:
    if frame.dim() != 3 or frame.shape[0] != 3:
        raise ValueError(f"expected a [3, H, W] frame, got {tuple(frame.shape)}")
    if frame.shape[1] < 1 or frame.shape[2] < 1:
        raise ValueError(f"degenerate frame of shape {tuple(frame.shape)}")
    return frame


def to_tensor(arr: np.ndarray) -> torch.Tensor:
    """uint8 HxWx3 (or HxW) array to a [3, H, W] float frame."""
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=2)
    return torch.from_numpy(np.ascontiguousarray(arr[..., :3].transpose(2, 0, 1))).float().div_(255.0)


def to_uint8(frame: torch.Tensor) -> np.ndarray:
    arr = frame.detach().clamp(0, 1).mul(255.0).round().to(torch.uint8)
    return arr.permute(1, 2, 0).cpu().numpy()


def read_frame(path) -> torch.Tensor:
    with Image.open(path) as im:
        return to_tensor(np.asarray(im.convert("RGB")))


def write_frame(frame: torch.Tensor, path) -> None:
    Image.fromarray(to_uint8(frame)).save(path)


def letterbox(frame: torch.Tensor, size=CANVAS_1080) -> torch.Tensor:
    """Scale uniformly to fit ``size`` and zero-pad the remainder, centered.

    Bilinear resampling; frames that already fit exactly are returned as is.
    """
    check_frame(frame)
    th, tw = size
    _, h, w = frame.shape
    scale = min(th / h, tw / w)
    nh = min(th, max(1, round(h * scale)))
    nw = min(tw, max(1, round(w * scale)))
    if (nh, nw) != (h, w):
        frame = F.interpolate(frame[None], size=(nh, nw), mode="bilinear",
                              align_corners=False)[0].clamp_(0.0, 1.0)
    if (nh, nw) == (th, tw):
        return frame
    out = frame.new_zeros((3, th, tw))
    top, left = (th - nh) // 2, (tw - nw) // 2
    out[:, top:top + nh, left:left + nw] = frame
    return out


def letterbox_1080(frame: torch.Tensor) -> torch.Tensor:
    return letterbox(frame, CANVAS_1080)


def crop_params(height, width, rng: np.random.Generator, crop=CROP):
    """Draw ``(top, left, flip)`` for one random crop."""
    ch, cw = crop
    if height < ch or width < cw:
        raise ValueError(f"frame {height}x{width} smaller than crop {ch}x{cw}")
    top = int(rng.integers(0, height - ch + 1))
    left = int(rng.integers(0, width - cw + 1))
    flip = bool(rng.random() < 0.5)
    return top, left, flip


def augment(frame: torch.Tensor, rng: np.random.Generator, crop=CROP) -> torch.Tensor:
    """Uniform random crop followed by a horizontal flip with probability 0.5."""
    check_frame(frame)
    top, left, flip = crop_params(frame.shape[1], frame.shape[2], rng, crop)
    out = frame[:, top:top + crop[0], left:left + crop[1]]
    if flip:
        out = out.flip(-1)
    return out.contiguous()


def center_crop(frame: torch.Tensor, crop=CROP) -> torch.Tensor:
    check_frame(frame)
    ch, cw = crop
    _, h, w = frame.shape
    if h < ch or w < cw:
        raise ValueError(f"frame {h}x{w} smaller than crop {ch}x{cw}")
    top, left = (h - ch) // 2, (w - cw) // 2
    return frame[:, top:top + ch, left:left + cw].contiguous()


def list_frame_files(directory) -> list[Path]:
    directory = Path(directory)
    return sorted(p for p in directory.iterdir()
                  if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def decode_video(path, decoder: str, out_dir) -> list[Path]:
    """Run the user's decoder command template.

    ``decoder`` must contain ``{input}`` and ``{output}`` placeholders, e.g.
    ``ffmpeg -loglevel error -i {input} {output}/%05d.png``.
    """
    if "{input}" not in decoder or "{output}" not in decoder:
        raise ValueError("decoder template needs {input} and {output} placeholders")
    cmd = decoder.format(input=shlex.quote(str(path)), output=shlex.quote(str(out_dir)))
    proc = subprocess.run(cmd, shell=True, capture_output=True, text=True)
    if proc.returncode != 0:
        raise FrameSourceError(f"decoder failed ({proc.returncode}): {proc.stderr.strip()}")
    return list_frame_files(out_dir)


def load_frames(source, stride: int = 1, decoder: str | None = None,
                item_id: str | None = None) -> list[torch.Tensor]:
    """Load frames from a numbered-frame directory or, via ``decoder``, a video file.

    Every ``stride``-th frame is kept, starting from the first.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    source = Path(source)
    try:
        if source.is_dir():
            files = list_frame_files(source)
            if not files:
                raise FrameSourceError(f"no frames in {source}", item_id)
            return [read_frame(p) for p in files[::stride]]
        if source.is_file():
            if decoder is None:
                raise FrameSourceError(f"{source} is a file and no decoder is configured", item_id)
            with tempfile.TemporaryDirectory() as tmp:
                files = decode_video(source, decoder, tmp)
                if not files:
                    raise FrameSourceError(f"decoder produced no frames for {source}", item_id)
                return [read_frame(p) for p in files[::stride]]
    except FrameSourceError:
        raise
    except OSError as exc:
        raise FrameSourceError(f"unreadable source {source}: {exc}", item_id) from exc
    raise FrameSourceError(f"frame source not found: {source}", item_id)


def count_frames(source) -> int:
    source = Path(source)
    return len(list_frame_files(source)) if source.is_dir() else 0


def load_item_frames(manifest, item, stride=1, decoder=None):
    return load_frames(manifest.source_path(item), stride, decoder, item.id)
