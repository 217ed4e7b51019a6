"""Training loops for the teacher (MAE + hard-rank objective) and the
distilled student, plus checkpoint-based prediction."""
from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from .backbone import (STUDENT_SPEC, TEACHER_SPEC, BackboneSpec, CheckpointError, QualityNet,
                       build_network, load_checkpoint, predict_video, read_checkpoint,
                       save_checkpoint)
from .bench import Split, correlations
from .core import Manifest
from .distill import DistillConfig, total_distill_loss
from .losses import LossConfig, combined_loss
from .media import augment, decode_video, letterbox, list_frame_files, load_frames, read_frame

log = logging.getLogger(__name__)

SPECS = {"teacher": TEACHER_SPEC, "student": STUDENT_SPEC}
RECORDS_NAME = "records.jsonl"


@dataclass
class TrainConfig:
    lr0: float = 1e-4
    epochs: int = 50
    weight_decay: float = 5e-4
    batch_size: int = 16
    seed: int = 0
    lam: float = 1.0
    tau: float = 0.1
    net: str = "teacher"
    frames_per_clip_per_epoch: int = 8
    canvas: tuple = (1080, 1920)
    crop: tuple = (540, 960)
    val_fraction: float = 0.1
    eval_stride: int = 5
    deterministic: bool = True
    cache_frames: bool = True
    pretrained: str | None = None
    decoder: str | None = None
    # distillation only
    teacher_checkpoint: str | None = None
    enable_kd: bool = True
    enable_attention: bool = True

    def __post_init__(self):
        self.canvas = tuple(int(v) for v in self.canvas)
        self.crop = tuple(int(v) for v in self.crop)

    def validate(self):
        problems = []
        if self.epochs < 1:
            problems.append("epochs must be >= 1")
        if self.lr0 <= 0:
            problems.append("lr0 must be > 0")
        if self.weight_decay < 0:
            problems.append("weight_decay must be >= 0")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.frames_per_clip_per_epoch < 1:
            problems.append("frames_per_clip_per_epoch must be >= 1")
        if self.eval_stride < 1:
            problems.append("eval_stride must be >= 1")
        if self.net not in SPECS:
            problems.append(f"net must be one of {sorted(SPECS)}")
        if len(self.canvas) != 2 or len(self.crop) != 2:
            problems.append("canvas and crop are [height, width]")
        elif self.crop[0] > self.canvas[0] or self.crop[1] > self.canvas[1]:
            problems.append(f"crop {self.crop} larger than canvas {self.canvas}")
        if not 0 <= self.val_fraction < 1:
            problems.append("val_fraction must lie in [0, 1)")
        try:
            self.loss_config()
        except ValueError as exc:
            problems.append(str(exc))
        if problems:
            raise ValueError("; ".join(problems))

    def loss_config(self) -> LossConfig:
        return LossConfig(lam=self.lam, tau=self.tau)

    def distill_config(self) -> DistillConfig:
        return DistillConfig(self.enable_kd, self.enable_attention)

    def to_dict(self):
        d = asdict(self)
        d["canvas"], d["crop"] = list(self.canvas), list(self.crop)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown training keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class RunRecord:
    epoch: int
    lr: float
    losses: dict
    val_scc: float
    val_pcc: float
    wall_time: float


@dataclass
class TrainResult:
    best_checkpoint: Path
    last_checkpoint: Path
    records: list = field(default_factory=list)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Single cosine annealing cycle from ``lr0`` over ``epochs`` epochs."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    return cfg.lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.epochs))


# -- data --------------------------------------------------------------------

class FrameStore:
    """Frame paths per item, with an optional cache of letterboxed frames."""

    def __init__(self, manifest: Manifest, canvas, decoder=None, cache=True, scratch=None):
        self.manifest, self.canvas, self.decoder = manifest, tuple(canvas), decoder
        self.cache = {} if cache else None
        self.scratch = Path(scratch) if scratch else None
        self._files = {}

    def files(self, item) -> list[Path]:
        if item.id not in self._files:
            src = self.manifest.source_path(item)
            if src.is_dir():
                files = list_frame_files(src)
            elif src.is_file() and self.decoder:
                if self.scratch is None:
                    raise ValueError("decoding video sources for training needs a scratch dir")
                out = self.scratch / item.id
                out.mkdir(parents=True, exist_ok=True)
                files = list_frame_files(out) or decode_video(src, self.decoder, out)
            else:
                raise FileNotFoundError(f"{item.id}: cannot read frames from {src}")
            if not files:
                raise ValueError(f"{item.id}: zero frames")
            self._files[item.id] = files
        return self._files[item.id]

    def frame(self, item, index) -> torch.Tensor:
        path = self.files(item)[index]
        if self.cache is not None and path in self.cache:
            return self.cache[path]
        fr = letterbox(read_frame(path), self.canvas)
        if self.cache is not None:
            self.cache[path] = fr
        return fr


def epoch_batches(items, store: FrameStore, cfg: TrainConfig, rng: np.random.Generator):
    """Yield ``(frames [B,3,h,w], targets [B])`` for one epoch.

    Each video contributes ``frames_per_clip_per_epoch`` frames (without
    replacement when it has enough); samples from all videos are shuffled
    together so batches mix stimuli.
    """
    samples = []
    for item in items:
        n = len(store.files(item))
        k = cfg.frames_per_clip_per_epoch
        idx = rng.choice(n, size=k, replace=n < k)
        samples += [(item, int(i)) for i in idx]
    order = rng.permutation(len(samples))
    for start in range(0, len(order), cfg.batch_size):
        chunk = [samples[o] for o in order[start:start + cfg.batch_size]]
        frames = torch.stack([augment(store.frame(it, i), rng, cfg.crop) for it, i in chunk])
        targets = torch.tensor([it.mos_norm for it, _ in chunk], dtype=torch.float32)
        yield frames, targets


def carve_validation(manifest: Manifest, train_ids, fraction, seed) -> tuple[list, list]:
    """Hold out ``fraction`` of the training contents (at least one when possible)."""
    items = manifest.subset(train_ids)
    contents = items.content_ids()
    if fraction <= 0 or len(contents) < 2:
        return list(train_ids), []
    n_val = min(len(contents) - 1, max(1, int(round(fraction * len(contents)))))
    perm = np.random.default_rng(seed + 7919).permutation(len(contents))
    val_c = {contents[k] for k in perm[:n_val]}
    fit = [it.id for it in items if it.content_id not in val_c]
    val = [it.id for it in items if it.content_id in val_c]
    return fit, val


# -- prediction --------------------------------------------------------------

def video_score(net: QualityNet, store: FrameStore, item, stride: int) -> float:
    files = store.files(item)
    frames = [store.frame(item, i) for i in range(0, len(files), stride)]
    return predict_video(net, frames)


def validation_scores(net, store, items, stride):
    pred = np.array([video_score(net, store, it, stride) for it in items])
    truth = np.array([it.mos_norm for it in items])
    try:
        c = correlations(pred, truth)
        return c["scc"], c["pcc"]
    except ValueError:
        return float("nan"), float("nan")


def _input_meta(payload):
    meta = (payload.get("extra") or {}).get("input", {})
    return tuple(meta.get("canvas", (1080, 1920)))


def predict_items(checkpoint, manifest: Manifest, ids, stride=1, decoder=None) -> dict:
    """Normalized video scores for the given manifest ids."""
    payload = read_checkpoint(checkpoint)
    net = load_checkpoint(checkpoint)
    net.eval()
    store = FrameStore(manifest, _input_meta(payload), decoder, cache=False)
    items = manifest.by_id()
    return {i: video_score(net, store, items[i], stride) for i in ids}


def predict_sources(checkpoint, sources, stride=1, decoder=None) -> list:
    """Score raw frame directories or video files: ``[(source, score or exception)]``."""
    payload = read_checkpoint(checkpoint)
    net = load_checkpoint(checkpoint)
    net.eval()
    canvas = _input_meta(payload)
    out = []
    for src in sources:
        try:
            frames = [letterbox(f, canvas) for f in load_frames(src, stride, decoder)]
            out.append((src, predict_video(net, frames)))
        except Exception as exc:  # reported per input by the caller
            out.append((src, exc))
    return out


# -- training loop -------------------------------------------------------------

def _set_determinism(cfg: TrainConfig):
    torch.manual_seed(cfg.seed)
    torch.use_deterministic_algorithms(cfg.deterministic)


def _read_records(run_dir: Path) -> list[dict]:
    path = run_dir / RECORDS_NAME
    if not path.exists():
        return []
    return [json.loads(ln) for ln in path.read_text().splitlines() if ln.strip()]


def _append_record(run_dir: Path, rec: RunRecord):
    with open(run_dir / RECORDS_NAME, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")
        fh.flush()
        os.fsync(fh.fileno())


def _rewrite_records(run_dir: Path, records: list[dict]):
    tmp = run_dir / (RECORDS_NAME + ".tmp")
    tmp.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
    tmp.replace(run_dir / RECORDS_NAME)


def _fit(net, loss_fn, manifest, split, cfg: TrainConfig, run_dir, resume=False, extra_meta=None):
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    fit_ids, val_ids = carve_validation(manifest, split.train, cfg.val_fraction, cfg.seed)
    if not fit_ids:
        raise ValueError("training partition is empty")
    by_id = manifest.by_id()
    fit_items = [by_id[i] for i in fit_ids]
    val_items = [by_id[i] for i in val_ids]
    store = FrameStore(manifest, cfg.canvas, cfg.decoder, cfg.cache_frames, run_dir / "decoded")
    opt = torch.optim.AdamW(net.parameters(), lr=cfg.lr0, betas=(0.9, 0.999), eps=1e-8,
                            weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    last_path, best_path = run_dir / "last.pt", run_dir / "best.pt"
    meta = {"input": {"canvas": list(cfg.canvas), "crop": list(cfg.crop)},
            "train_config": cfg.to_dict(), **(extra_meta or {})}
    start, best_scc = 0, -math.inf
    if resume and last_path.exists():
        payload = read_checkpoint(last_path)
        state = payload["extra"]["train_state"]
        net.load_state_dict(payload["state_dict"])
        opt.load_state_dict(state["optimizer"])
        rng.bit_generator.state = state["rng"]
        torch.set_rng_state(state["torch_rng"])
        start, best_scc = state["epoch"] + 1, state["best_scc"]
        _rewrite_records(run_dir, [r for r in _read_records(run_dir) if r["epoch"] < start])
        log.info("resuming at epoch %d", start)
    elif not resume:
        _rewrite_records(run_dir, [])
    (run_dir / "split.json").write_text(json.dumps(
        {**split.to_dict(), "fit": fit_ids, "val": val_ids}, indent=2, sort_keys=True) + "\n")

    for epoch in range(start, cfg.epochs):
        t0 = time.perf_counter()
        lr = lr_at(epoch, cfg)
        for g in opt.param_groups:
            g["lr"] = lr
        net.train()
        sums, count = {}, 0
        for frames, targets in epoch_batches(fit_items, store, cfg, rng):
            opt.zero_grad(set_to_none=True)
            loss, parts = loss_fn(net, frames, targets)
            loss.backward()
            opt.step()
            b = targets.shape[0]
            count += b
            for k, v in {"total": loss.detach(), **parts}.items():
                sums[k] = sums.get(k, 0.0) + float(v) * b
        losses = {k: v / count for k, v in sums.items()}
        if val_items:
            val_scc, val_pcc = validation_scores(net, store, val_items, cfg.eval_stride)
        else:
            val_scc = val_pcc = float("nan")
        rec = RunRecord(epoch, lr, losses, val_scc, val_pcc, time.perf_counter() - t0)
        _append_record(run_dir, rec)
        log.info("epoch %d lr %.2e loss %.4f val scc %.4f", epoch, lr, losses["total"], val_scc)
        # no validation split: the last epoch wins
        improved = (not val_items) or (not math.isnan(val_scc) and val_scc > best_scc)
        if improved:
            best_scc = val_scc if val_items else best_scc
            save_checkpoint(net, best_path, {**meta, "epoch": epoch, "val_scc": val_scc})
        state = {"epoch": epoch, "best_scc": best_scc, "optimizer": opt.state_dict(),
                 "rng": rng.bit_generator.state, "torch_rng": torch.get_rng_state()}
        save_checkpoint(net, last_path, {**meta, "epoch": epoch, "train_state": state})
    if not best_path.exists():
        save_checkpoint(net, best_path, {**meta, "epoch": cfg.epochs - 1, "val_scc": float("nan")})
    return TrainResult(best_path, last_path, _read_records(run_dir))


def _check_split(split: Split):
    if not split.train or not split.test:
        raise ValueError("split has an empty partition")


def _write_config(run_dir, cfg, kind):
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(
        {"kind": kind, **cfg.to_dict(),
         "determinism": "bitwise on CPU" if cfg.deterministic else "not guaranteed"},
        indent=2, sort_keys=True) + "\n")


def train_teacher(manifest: Manifest, split: Split, cfg: TrainConfig, run_dir, resume=False):
    """Train ``cfg.net`` (teacher by default) on MAE + lam * hard-rank loss."""
    cfg.validate()
    _check_split(split)
    _set_determinism(cfg)
    net = build_network(SPECS[cfg.net], cfg.pretrained)
    lcfg = cfg.loss_config()

    def loss_fn(net, frames, targets):
        scores, _ = net(frames)
        return combined_loss(targets, scores, lcfg, parts=True)

    _write_config(run_dir, cfg, "train")
    return _fit(net, loss_fn, manifest, split, cfg, run_dir, resume)


def load_frozen_teacher(path) -> QualityNet:
    teacher = load_checkpoint(path)
    teacher.eval()
    for p in teacher.parameters():
        p.requires_grad_(False)
    return teacher


def check_stage_shapes(student: QualityNet, teacher: QualityNet, crop):
    x = torch.zeros(1, 3, *crop)
    with torch.no_grad():
        s_mode, t_mode = student.training, teacher.training
        student.eval()
        _, fs = student(x)
        _, ft = teacher(x)
        student.train(s_mode)
        teacher.train(t_mode)
    for i, (a, b) in enumerate(zip(fs, ft), start=1):
        if a.shape != b.shape:
            raise ValueError(f"stage {i}: student {tuple(a.shape)} vs teacher {tuple(b.shape)}")


def train_student(manifest: Manifest, split: Split, cfg: TrainConfig, run_dir,
                  teacher_checkpoint=None, resume=False):
    """Distil a frozen teacher into ``cfg.net`` (student by default)."""
    cfg.validate()
    _check_split(split)
    teacher_checkpoint = teacher_checkpoint or cfg.teacher_checkpoint
    if teacher_checkpoint is None:
        raise CheckpointError("distillation needs a teacher checkpoint")
    read_checkpoint(teacher_checkpoint)
    _set_determinism(cfg)
    student = build_network(SPECS[cfg.net], cfg.pretrained)
    teacher = load_frozen_teacher(teacher_checkpoint)
    check_stage_shapes(student, teacher, cfg.crop)
    lcfg, dcfg = cfg.loss_config(), cfg.distill_config()
    need_teacher = dcfg.enable_kd or dcfg.enable_attention

    def loss_fn(net, frames, targets):
        scores, feats = net(frames)
        if need_teacher:
            with torch.no_grad():
                t_scores, t_feats = teacher(frames)
        else:
            t_scores, t_feats = scores.detach(), [f.detach() for f in feats]
        return total_distill_loss(targets, scores, feats, t_scores, t_feats, lcfg, dcfg, parts=True)

    cfg.teacher_checkpoint = str(teacher_checkpoint)
    _write_config(run_dir, cfg, "distill")
    return _fit(student, loss_fn, manifest, split, cfg, run_dir, resume,
                {"teacher_checkpoint": str(teacher_checkpoint)})
