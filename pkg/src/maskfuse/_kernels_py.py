"""NumPy reference implementation of the hot kernels.

Selected at import time when the compiled extension is unavailable (or when
MASKFUSE_DISABLE_EXT is set).  Must stay bit-identical to ``_kernels.pyx``;
``tests/test_kernels.py`` enforces the parity.
"""
from __future__ import annotations

import numpy as np


def rle_encode(flat: np.ndarray) -> np.ndarray:
    """Encode a flat 0/1 uint8 array into alternating run lengths.

    The first run counts zeros and may be 0; every later run is >= 1.
    """
    flat = np.ascontiguousarray(flat, dtype=np.uint8)
    n = flat.size
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [n]))
    runs = np.diff(bounds).astype(np.int64)
    if flat[0]:
        runs = np.concatenate(([0], runs))
    return runs


def rle_decode(runs: np.ndarray, size: int) -> np.ndarray:
    """Expand alternating run lengths back into a flat 0/1 uint8 array."""
    runs = np.asarray(runs, dtype=np.int64)
    values = np.zeros(runs.size, dtype=np.uint8)
    values[1::2] = 1
    out = np.repeat(values, runs)
    if out.size != size:
        raise ValueError(f"runs sum to {out.size}, expected {size}")
    return out


def paint_first_wins(labels: np.ndarray, mask: np.ndarray, category: int) -> None:
    """Assign ``category`` to still-background pixels covered by ``mask``.

    In-place on ``labels``; pixels already labeled are never overwritten.
    """
    np.putmask(labels, (labels == 0) & (mask != 0), category)


def confusion_update(cells: np.ndarray, gt: np.ndarray, pred: np.ndarray) -> None:
    """Add pixel counts to ``cells`` with rows = ground truth, cols = prediction."""
    n = cells.shape[0]
    idx = gt.astype(np.int64) * n + pred.astype(np.int64)
    counts = np.bincount(idx, minlength=n * n)
    cells += counts.reshape(n, n)
