"""Scatter/segment kernels and pairwise distances.

Each kernel has a numba ``@njit`` version and a pure-numpy version with the
same contract. The numba path is used unless ``MOLR_NO_JIT=1`` is set or
numba cannot be imported; ``BACKEND`` reports which one is active.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


# ---------------------------------------------------------------- numpy path

def segment_sum_np(x, seg, n_seg):
    out = np.zeros((n_seg, x.shape[1]))
    np.add.at(out, seg, x)
    return out


def segment_max_np(x, seg, n_seg):
    n, d = x.shape
    out = np.full((n_seg, d), -np.inf)
    np.maximum.at(out, seg, x)
    rows = np.broadcast_to(np.arange(n)[:, None], (n, d))
    cand = np.where(x == out[seg], rows, n)
    arg = np.full((n_seg, d), n, dtype=np.int64)
    np.minimum.at(arg, seg, cand)
    return out, arg


def segment_softmax_np(x, seg, n_seg):
    top = np.full(n_seg, -np.inf)
    np.maximum.at(top, seg, x)
    e = np.exp(x - top[seg])
    denom = np.zeros(n_seg)
    np.add.at(denom, seg, e)
    return e / denom[seg]


def pairwise_distances_np(a, b, chunk=256):
    out = np.empty((a.shape[0], b.shape[0]))
    for s in range(0, a.shape[0], chunk):
        diff = a[s:s + chunk, None, :] - b[None, :, :]
        out[s:s + chunk] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return out


# ---------------------------------------------------------------- numba path

if numba is not None:
    @numba.njit(cache=True)
    def segment_sum_jit(x, seg, n_seg):
        out = np.zeros((n_seg, x.shape[1]))
        for r in range(x.shape[0]):
            s = seg[r]
            for c in range(x.shape[1]):
                out[s, c] += x[r, c]
        return out

    @numba.njit(cache=True)
    def segment_max_jit(x, seg, n_seg):
        n, d = x.shape
        out = np.full((n_seg, d), -np.inf)
        arg = np.full((n_seg, d), n, dtype=np.int64)
        for r in range(n):
            s = seg[r]
            for c in range(d):
                # strict > keeps the lowest row index on ties
                if arg[s, c] == n or x[r, c] > out[s, c]:
                    out[s, c] = x[r, c]
                    arg[s, c] = r
        return out, arg

    @numba.njit(cache=True)
    def segment_softmax_jit(x, seg, n_seg):
        top = np.full(n_seg, -np.inf)
        for r in range(x.shape[0]):
            if x[r] > top[seg[r]]:
                top[seg[r]] = x[r]
        e = np.empty_like(x)
        denom = np.zeros(n_seg)
        for r in range(x.shape[0]):
            e[r] = np.exp(x[r] - top[seg[r]])
            denom[seg[r]] += e[r]
        for r in range(x.shape[0]):
            e[r] /= denom[seg[r]]
        return e

    @numba.njit(cache=True)
    def pairwise_distances_jit(a, b):
        m, k, d = a.shape[0], b.shape[0], a.shape[1]
        out = np.empty((m, k))
        for i in range(m):
            for j in range(k):
                acc = 0.0
                for c in range(d):
                    t = a[i, c] - b[j, c]
                    acc += t * t
                out[i, j] = np.sqrt(acc)
        return out


def _use_jit() -> bool:
    return numba is not None and os.environ.get("MOLR_NO_JIT", "0") not in ("1", "true", "yes")


if _use_jit():
    BACKEND = "numba"
    _segment_sum, _segment_max = segment_sum_jit, segment_max_jit
    _segment_softmax, _pairwise = segment_softmax_jit, pairwise_distances_jit
else:
    BACKEND = "numpy"
    _segment_sum, _segment_max = segment_sum_np, segment_max_np
    _segment_softmax, _pairwise = segment_softmax_np, pairwise_distances_np


def segment_sum(x: np.ndarray, seg: np.ndarray, n_seg: int) -> np.ndarray:
    return _segment_sum(np.ascontiguousarray(x, dtype=np.float64), np.asarray(seg, dtype=np.int64), int(n_seg))


def segment_max(x: np.ndarray, seg: np.ndarray, n_seg: int) -> tuple[np.ndarray, np.ndarray]:
    return _segment_max(np.ascontiguousarray(x, dtype=np.float64), np.asarray(seg, dtype=np.int64), int(n_seg))


def segment_softmax(x: np.ndarray, seg: np.ndarray, n_seg: int) -> np.ndarray:
    return _segment_softmax(np.ascontiguousarray(x, dtype=np.float64), np.asarray(seg, dtype=np.int64), int(n_seg))


def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return _pairwise(np.ascontiguousarray(a, dtype=np.float64), np.ascontiguousarray(b, dtype=np.float64))
