"""Teacher and student ResNet quality regressors with stage taps.

The trunk follows torchvision's ResNet layout and parameter names (``conv1``,
``bn1``, ``layer1`` .. ``layer4``), so a torchvision ``resnet18`` state dict
loads straight into the teacher trunk.
"""
from __future__ import annotations

import io
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import torch
from torch import nn
from torchvision.models.resnet import BasicBlock

log = logging.getLogger(__name__)


CHECKPOINT_SCHEMA = 1


@dataclass(frozen=True)
class BackboneSpec:
    blocks_per_stage: tuple = (2, 2, 2, 2)
    stage_channels: tuple = (64, 128, 256, 512)
    head_hidden: int = 64

    def __post_init__(self):
        object.__setattr__(self, "blocks_per_stage", tuple(int(b) for b in self.blocks_per_stage))
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        if len(self.blocks_per_stage) != 4 or len(self.stage_channels) != 4:
            raise ValueError("a backbone has exactly 4 stages")
        if min(self.blocks_per_stage) < 1 or min(self.stage_channels) < 1:
            raise ValueError("blocks and channels must be positive")

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


TEACHER_SPEC = BackboneSpec((2, 2, 2, 2))
STUDENT_SPEC = BackboneSpec((1, 1, 1, 1))


@dataclass
class StageFeatures:
    """Per-frame view of one forward pass: the 4 stage maps and the score."""

    A: list = field(default_factory=list)
    score: float = 0.0


class QualityNet(nn.Module):
    def __init__(self, spec: BackboneSpec = TEACHER_SPEC):
        super().__init__()
        self.spec = spec
        c = spec.stage_channels
        self.conv1 = nn.Conv2d(3, c[0], kernel_size=7, stride=2, padding=3, bias=False)
        self.bn1 = nn.BatchNorm2d(c[0])
        self.relu = nn.ReLU(inplace=True)
        self.maxpool = nn.MaxPool2d(kernel_size=3, stride=2, padding=1)
        in_ch = c[0]
        for s in range(4):
            stride = 1 if s == 0 else 2
            layer, in_ch = _make_stage(in_ch, c[s], spec.blocks_per_stage[s], stride)
            setattr(self, f"layer{s + 1}", layer)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc1 = nn.Linear(c[3], spec.head_hidden)
        self.fc2 = nn.Linear(spec.head_hidden, 1)
        self._init_weights()

    def _init_weights(self):
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
            elif isinstance(m, nn.BatchNorm2d):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)
        # zero-init the last BN of each residual branch; blocks start as identities
        for m in self.modules():
            if isinstance(m, BasicBlock):
                nn.init.zeros_(m.bn2.weight)

    def stages(self):
        return [self.layer1, self.layer2, self.layer3, self.layer4]

    def forward(self, x: torch.Tensor):
        """Return ``(scores [B], [A1, A2, A3, A4])``."""
        x = self.maxpool(self.relu(self.bn1(self.conv1(x))))
        feats = []
        for layer in self.stages():
            x = layer(x)
            feats.append(x)
        z = torch.flatten(self.pool(x), 1)
        score = self.fc2(torch.relu(self.fc1(z))).squeeze(1)
        return score, feats

    def score(self, x: torch.Tensor) -> torch.Tensor:
        return self.forward(x)[0]


def _make_stage(in_ch, out_ch, blocks, stride):
    downsample = None
    if stride != 1 or in_ch != out_ch:
        downsample = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, kernel_size=1, stride=stride, bias=False),
            nn.BatchNorm2d(out_ch),
        )
    layers = [BasicBlock(in_ch, out_ch, stride, downsample)]
    layers += [BasicBlock(out_ch, out_ch) for _ in range(1, blocks)]
    return nn.Sequential(*layers), out_ch


class CheckpointError(ValueError):
    pass


def build_network(spec: BackboneSpec = TEACHER_SPEC, pretrained=None) -> QualityNet:
    """Build a network; optionally load trunk weights from ``pretrained``.

    ``pretrained`` is a path or a state dict. Head weights in it (and any
    classifier ``fc.*`` keys) are ignored; the head stays randomly initialised.
    """
    net = QualityNet(spec)
    if pretrained is not None:
        state = pretrained
        if not isinstance(state, dict):
            state = torch.load(pretrained, map_location="cpu", weights_only=True)
        if "state_dict" in state and isinstance(state["state_dict"], dict):
            state = state["state_dict"]
        load_trunk(net, state)
    return net


def _is_head_key(key):
    return key.startswith(("fc.", "fc1.", "fc2."))


def load_trunk(net: QualityNet, state: dict):
    own = {k: v for k, v in net.state_dict().items() if not _is_head_key(k)}
    incoming = {k: v for k, v in state.items() if not _is_head_key(k)}
    problems = []
    for k, v in own.items():
        if k not in incoming:
            problems.append(f"{k}: missing")
        elif tuple(incoming[k].shape) != tuple(v.shape):
            problems.append(f"{k}: expected {tuple(v.shape)}, got {tuple(incoming[k].shape)}")
    unexpected = sorted(set(incoming) - set(own))
    problems += [f"{k}: unexpected" for k in unexpected]
    if problems:
        raise CheckpointError("checkpoint incompatible with trunk:\n  " + "\n  ".join(problems))
    net.load_state_dict(incoming, strict=False)


def count_parameters(net: nn.Module, trainable_only=True) -> int:
    return sum(p.numel() for p in net.parameters() if p.requires_grad or not trainable_only)


def count_flops(net: nn.Module, input_hw=(540, 960)) -> int:
    """Multiply-accumulate count of conv and linear layers for one frame.

    Reported in the usual MAC-as-FLOP convention; norms, activations and
    pooling are ignored.
    """
    total = 0

    def conv_hook(mod, inp, out):
        nonlocal total
        k = mod.kernel_size[0] * mod.kernel_size[1] * (mod.in_channels // mod.groups)
        total += out.numel() * k

    def linear_hook(mod, inp, out):
        nonlocal total
        total += out.numel() * mod.in_features

    handles = []
    for m in net.modules():
        if isinstance(m, nn.Conv2d):
            handles.append(m.register_forward_hook(conv_hook))
        elif isinstance(m, nn.Linear):
            handles.append(m.register_forward_hook(linear_hook))
    was_training = net.training
    net.eval()
    try:
        with torch.no_grad():
            net(torch.zeros(1, 3, *input_hw))
    finally:
        for h in handles:
            h.remove()
        net.train(was_training)
    return total


def _stack(frames: Sequence[torch.Tensor]) -> torch.Tensor:
    if isinstance(frames, torch.Tensor):
        return frames
    if len(frames) == 0:
        raise ValueError("empty frame batch")
    shapes = {tuple(f.shape) for f in frames}
    if len(shapes) != 1:
        raise ValueError(f"frames in a batch must share one shape, got {sorted(shapes)}")
    return torch.stack(list(frames))


def forward_with_taps(net: QualityNet, frames) -> list[StageFeatures]:
    """Forward a batch and split the outputs per frame."""
    scores, feats = net(_stack(frames))
    return [StageFeatures(A=[a[b] for a in feats], score=scores[b]) for b in range(scores.shape[0])]


@torch.no_grad()
def frame_scores(net: QualityNet, frames, batch_size=16) -> torch.Tensor:
    net.eval()
    out = []
    for start in range(0, len(frames), batch_size):
        out.append(net.score(_stack(frames[start:start + batch_size])))
    return torch.cat(out)


def predict_video(net, frames, batch_size=16) -> float:
    """Mean of per-frame scores.

    ``net`` may be a :class:`QualityNet` or any callable mapping one frame to
    a scalar score.
    """
    if len(frames) == 0:
        raise ValueError("cannot score a video with no frames")
    if isinstance(net, QualityNet):
        scores = frame_scores(net, frames, batch_size).double()
        return float(scores.mean())
    scores = [float(net(f)) for f in frames]
    return float(sum(scores) / len(scores))


def save_checkpoint(net: QualityNet, path, extra: dict | None = None) -> Path:
    """Write a self-describing checkpoint: spec metadata plus named tensors."""
    path = Path(path)
    payload = {
        "schema_version": CHECKPOINT_SCHEMA,
        "spec": net.spec.to_dict(),
        "state_dict": {k: v.detach().cpu().clone() for k, v in net.state_dict().items()},
    }
    if extra:
        payload["extra"] = extra
    # in-memory buffer: torch otherwise names the archive root after the file
    buf = io.BytesIO()
    torch.save(payload, buf)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)
    return path


def read_checkpoint(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "spec" not in payload or "state_dict" not in payload:
        raise CheckpointError(f"{path} is not a quality-net checkpoint")
    if payload.get("schema_version", 0) > CHECKPOINT_SCHEMA:
        raise CheckpointError(f"{path}: unsupported schema_version {payload['schema_version']}")
    return payload


def load_checkpoint(path, expect_spec: BackboneSpec | None = None) -> QualityNet:
    payload = read_checkpoint(path)
    spec = BackboneSpec(**payload["spec"])
    if expect_spec is not None and spec != expect_spec:
        raise CheckpointError(f"{path}: spec {spec} does not match expected {expect_spec}")
    net = QualityNet(spec)
    try:
        net.load_state_dict(payload["state_dict"])
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    return net
