"""ERAQUE: no-reference gaming video quality estimation.

A ResNet quality regressor trained with MAE plus a hard-pair ranking loss,
compressed into a shallower student via score and attention distillation.
"""
from .core import Manifest, ManifestError, VideoItem, enumerate_pairs, normalize_mos

__version__ = "0.1.0"

__all__ = ["Manifest", "ManifestError", "VideoItem", "enumerate_pairs", "normalize_mos"]
