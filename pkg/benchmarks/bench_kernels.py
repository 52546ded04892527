"""Benchmark the compiled kernels against the NumPy fallback.

Run:  python benchmarks/bench_kernels.py [--size 650x1250] [--repeats 20]

Workloads mirror the engine's hot paths at full-scene scale: RLE encode and
decode of a blobby mask, the first-wins paint of ten masks into a label
grid, and a dataset-style confusion update.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from maskfuse import _kernels_py

try:
    from maskfuse import _kernels
except ImportError:
    _kernels = None


def _blobby_mask(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Foreground blobs with realistic run structure (not per-pixel noise)."""
    bits = np.zeros((height, width), dtype=np.uint8)
    for _ in range(12):
        cy, cx = rng.integers(0, height), rng.integers(0, width)
        ry, rx = rng.integers(5, height // 4), rng.integers(5, width // 4)
        bits[max(0, cy - ry) : cy + ry, max(0, cx - rx) : cx + rx] = 1
    return bits


def _time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def build_workloads(height: int, width: int):
    rng = np.random.default_rng(0)
    bits = _blobby_mask(rng, height, width)
    flat = bits.ravel()
    runs = _kernels_py.rle_encode(flat)
    masks = [_blobby_mask(rng, height, width) for _ in range(10)]
    gt = rng.integers(0, 5, size=height * width, dtype=np.uint8)
    pred = rng.integers(0, 5, size=height * width, dtype=np.uint8)

    def paint(impl):
        labels = np.zeros((height, width), dtype=np.uint8)
        for category, mask in enumerate(masks, start=1):
            impl.paint_first_wins(labels, mask, (category % 4) + 1)
        return labels

    def confusion(impl):
        cells = np.zeros((5, 5), dtype=np.int64)
        impl.confusion_update(cells, gt, pred)
        return cells

    return {
        "rle_encode": lambda impl: impl.rle_encode(flat),
        "rle_decode": lambda impl: impl.rle_decode(runs, flat.size),
        "paint_first_wins (10 masks)": paint,
        "confusion_update": confusion,
    }


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", default="650x1250", help="HxW of the test grid")
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()
    height, width = (int(v) for v in args.size.split("x"))

    workloads = build_workloads(height, width)
    backends = [("python", _kernels_py)]
    if _kernels is not None:
        backends.append(("cython", _kernels))
    else:
        print("compiled kernels not built; showing the NumPy fallback only\n")

    print(f"grid {height}x{width}, best of {args.repeats} runs\n")
    name_width = max(len(name) for name in workloads)
    header = f"{'kernel':<{name_width}}  " + "".join(
        f"{label:>12}" for label, _ in backends
    )
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for name, job in workloads.items():
        times = [_time(lambda impl=impl: job(impl), args.repeats) for _, impl in backends]
        row = f"{name:<{name_width}}  " + "".join(f"{t * 1e3:>10.3f}ms" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:>9.2f}x"
        print(row)


if __name__ == "__main__":
    main()
