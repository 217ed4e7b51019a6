"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from eraque._kernels import _fallback

try:
    from eraque._kernels import _core
except ImportError:
    _core = None


def cases(rng):
    img = rng.uniform(0, 255, (540, 960))
    g = np.exp(-0.5 * ((np.arange(11) - 5) / 1.5) ** 2)
    win = g / g.sum()
    x = rng.integers(0, 20, 200).astype(float)
    y = x + rng.normal(0, 3, 200).round()
    yb = rng.uniform(0, 1, 64)
    pb = yb + rng.normal(0, 0.1, 64)
    return {
        "sep_filter_valid 540x960": lambda m: m.sep_filter_valid(img, win),
        "tau_b_counts n=200": lambda m: m.tau_b_counts(x, y),
        "hard_pair_stats B=64": lambda m: m.hard_pair_stats(yb, pb, 0.1),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} {'python ms':>10s} {'compiled ms':>12s} {'speedup':>8s}")
    for name, fn in cases(rng).items():
        n = 3 if "sep" in name else 50
        py = min(timeit.repeat(lambda: fn(_fallback), number=n, repeat=args.repeat)) / n
        if _core is None:
            print(f"{name:28s} {py * 1e3:10.3f} {'n/a':>12s}")
            continue
        c = min(timeit.repeat(lambda: fn(_core), number=n, repeat=args.repeat)) / n
        print(f"{name:28s} {py * 1e3:10.3f} {c * 1e3:12.3f} {py / c:7.1f}x")


if __name__ == "__main__":
    main()
