"""Full-reference baselines: PSNR, SSIM and MS-SSIM.

SSIM/MS-SSIM run on BT.601 luma in the 8-bit range, with an 11-tap
Gaussian window (sigma 1.5), K1=0.01, K2=0.03 and valid-mode filtering.
MS-SSIM uses 5 scales with 2x2 average-pool downsampling.
"""
from __future__ import annotations

import numpy as np

from . import _kernels

PEAK = 255.0
PSNR_CAP = 100.0
WIN_SIZE, WIN_SIGMA = 11, 1.5
K1, K2 = 0.01, 0.03
MS_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def _as_array(frame) -> np.ndarray:
    if hasattr(frame, "detach"):
        frame = frame.detach().cpu().numpy()
    return np.asarray(frame, dtype=np.float64)


def _pair(ref, dist):
    ref, dist = _as_array(ref), _as_array(dist)
    if ref.shape != dist.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {dist.shape}")
    return ref, dist


def psnr(ref, dist) -> float:
    """PSNR in dB for frames in [0, 1]; identical frames give ``PSNR_CAP``."""
    ref, dist = _pair(ref, dist)
    mse = float(np.mean((ref * PEAK - dist * PEAK) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(PEAK ** 2 / mse))


def luma(frame) -> np.ndarray:
    """BT.601 luma of a [3, H, W] frame in [0, 1], scaled to [0, 255]. 2-d input passes through."""
    f = _as_array(frame)
    if f.ndim == 2:
        return f * PEAK
    if f.ndim != 3 or f.shape[0] != 3:
        raise ValueError(f"expected [3, H, W] or [H, W], got {f.shape}")
    return PEAK * (0.299 * f[0] + 0.587 * f[1] + 0.114 * f[2])


def gaussian_window(size=WIN_SIZE, sigma=WIN_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - size // 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _ssim_cs(x: np.ndarray, y: np.ndarray, win: np.ndarray):
    filt = _kernels.sep_filter_valid
    c1, c2 = (K1 * PEAK) ** 2, (K2 * PEAK) ** 2
    x, y = np.ascontiguousarray(x), np.ascontiguousarray(y)
    mu1, mu2 = filt(x, win), filt(y, win)
    mu1_sq, mu2_sq, mu12 = mu1 * mu1, mu2 * mu2, mu1 * mu2
    s1 = filt(x * x, win) - mu1_sq
    s2 = filt(y * y, win) - mu2_sq
    s12 = filt(x * y, win) - mu12
    cs_map = (2 * s12 + c2) / (s1 + s2 + c2)
    ssim_map = ((2 * mu12 + c1) / (mu1_sq + mu2_sq + c1)) * cs_map
    return float(ssim_map.mean()), float(cs_map.mean())


def ssim(ref, dist) -> float:
    ref, dist = _pair(ref, dist)
    x, y = luma(ref), luma(dist)
    if min(x.shape) < WIN_SIZE:
        raise ValueError(f"frame {x.shape} smaller than the {WIN_SIZE}-tap window")
    return _ssim_cs(x, y, gaussian_window())[0]


def _downsample(x: np.ndarray) -> np.ndarray:
    h, w = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def ms_ssim_min_side() -> int:
    return WIN_SIZE * 2 ** (len(MS_WEIGHTS) - 1)


def ms_ssim(ref, dist) -> float:
    ref, dist = _pair(ref, dist)
    x, y = luma(ref), luma(dist)
    if min(x.shape) < ms_ssim_min_side():
        raise ValueError(f"frame {x.shape} too small for {len(MS_WEIGHTS)}-scale MS-SSIM "
                         f"(min side {ms_ssim_min_side()})")
    win = gaussian_window()
    cs_terms = []
    for level in range(len(MS_WEIGHTS)):
        s, cs = _ssim_cs(x, y, win)
        if level < len(MS_WEIGHTS) - 1:
            cs_terms.append(cs)
            x, y = _downsample(x), _downsample(y)
    vals = np.maximum(np.array(cs_terms + [s]), 0.0)
    return float(np.prod(vals ** np.array(MS_WEIGHTS)))


FR_METRICS = {"psnr": psnr, "ssim": ssim, "ms_ssim": ms_ssim}
