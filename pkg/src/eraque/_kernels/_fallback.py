"""Pure numpy versions of the compiled kernels.

Used when the extension is not built, or when ``ERAQUE_PURE_PYTHON=1``.
"""
import numpy as np


def sep_filter_valid(img, win):
    """Valid-mode separable correlation: rows with ``win``, then columns."""
    img = np.ascontiguousarray(img, dtype=np.float64)
    win = np.asarray(win, dtype=np.float64)
    h, w = img.shape
    k = win.shape[0]
    if k < 1 or h < k or w < k:
        raise ValueError(f"image {h}x{w} smaller than window {k}")
    ow, oh = w - k + 1, h - k + 1
    tmp = np.zeros((h, ow))
    for t in range(k):
        tmp += win[t] * img[:, t:t + ow]
    out = np.zeros((oh, ow))
    for t in range(k):
        out += win[t] * tmp[t:t + oh, :]
    return out


def tau_b_counts(x, y, chunk=1024):
    """Pair counts for Kendall tau-b.

    Returns ``(S, n0, tx, ty)``: concordant minus discordant pairs, total
    pairs, pairs tied in ``x`` and pairs tied in ``y``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    if y.shape[0] != n:
        raise ValueError("length mismatch")
    s = tx = ty = 0
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        dx = x[start:stop, None] - x[None, :]
        dy = y[start:stop, None] - y[None, :]
        # keep only j > i
        mask = np.arange(start, stop)[:, None] < np.arange(n)[None, :]
        prod = (dx * dy)[mask]
        s += int(np.count_nonzero(prod > 0)) - int(np.count_nonzero(prod < 0))
        tx += int(np.count_nonzero(dx[mask] == 0))
        ty += int(np.count_nonzero(dy[mask] == 0))
    return s, n * (n - 1) // 2, tx, ty


def hard_pair_stats(y, yhat, tau):
    """Hinge sum, gated pair count and correctly ordered count over hard pairs."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    n = y.shape[0]
    if yhat.shape[0] != n:
        raise ValueError("length mismatch")
    i, j = np.triu_indices(n, k=1)
    gap = y[i] - y[j]
    gate = (gap != 0) & (np.abs(gap) <= tau)
    gap = gap[gate]
    dp = yhat[i][gate] - yhat[j][gate]
    sign = np.where(gap >= 0, 1.0, -1.0)
    hinge = np.maximum(0.0, np.abs(gap) - sign * dp)
    return float(hinge.sum()), int(gate.sum()), int(np.count_nonzero(gap * dp > 0))
