# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: RLE codec, first-wins paint, confusion update.

Semantics are defined by ``_kernels_py``; this module only exists for speed
and must produce bit-identical results.
"""
import numpy as np

cimport numpy as cnp

cnp.import_array()


def rle_encode(flat):
    cdef const unsigned char[::1] data = np.ascontiguousarray(flat, dtype=np.uint8)
    cdef Py_ssize_t n = data.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)

    # Single pass into a worst-case buffer (n+1 runs), trimmed at the end.
    cdef cnp.ndarray[cnp.int64_t, ndim=1] buf = np.empty(n + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] out = buf
    cdef Py_ssize_t i, pos = 0
    if data[0] != 0:
        out[0] = 0
        pos = 1
    cdef cnp.int64_t run_len = 1
    for i in range(1, n):
        if data[i] != data[i - 1]:
            out[pos] = run_len
            pos += 1
            run_len = 1
        else:
            run_len += 1
    out[pos] = run_len
    return buf[: pos + 1].copy()


def rle_decode(runs, Py_ssize_t size):
    cdef cnp.int64_t[::1] r = np.ascontiguousarray(runs, dtype=np.int64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] flat = np.empty(size, dtype=np.uint8)
    cdef unsigned char[::1] out = flat
    cdef Py_ssize_t i, j, pos = 0
    cdef unsigned char value = 0
    cdef Py_ssize_t n_runs = r.shape[0]
    for i in range(n_runs):
        if pos + r[i] > size:
            raise ValueError(f"runs sum past {size}")
        for j in range(r[i]):
            out[pos] = value
            pos += 1
        value = 1 - value
    if pos != size:
        raise ValueError(f"runs sum to {pos}, expected {size}")
    return flat


def paint_first_wins(labels, mask, unsigned char category):
    cdef unsigned char[:, ::1] lab = labels
    cdef const unsigned char[:, ::1] m = np.ascontiguousarray(mask, dtype=np.uint8)
    if lab.shape[0] != m.shape[0] or lab.shape[1] != m.shape[1]:
        raise ValueError("labels/mask shape mismatch")
    cdef Py_ssize_t i, j
    for i in range(lab.shape[0]):
        for j in range(lab.shape[1]):
            if lab[i, j] == 0 and m[i, j] != 0:
                lab[i, j] = category


def confusion_update(cells, gt, pred):
    cdef cnp.int64_t[:, ::1] c = cells
    cdef const unsigned char[::1] g = np.ascontiguousarray(gt, dtype=np.uint8)
    cdef const unsigned char[::1] p = np.ascontiguousarray(pred, dtype=np.uint8)
    cdef Py_ssize_t n = c.shape[0]
    if g.shape[0] != p.shape[0]:
        raise ValueError("gt/pred length mismatch")
    cdef Py_ssize_t i
    for i in range(g.shape[0]):
        if g[i] >= n or p[i] >= n:
            raise ValueError("label outside confusion matrix")
        c[g[i], p[i]] += 1
