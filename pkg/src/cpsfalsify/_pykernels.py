"""Pure-Python/numpy inner loops; the fallback when the extension is not built.

Window conventions shared by both backends: for an input of length ``n``
and integer offsets ``0 <= lo <= hi`` the output has length ``max(n - hi, 0)``
and entry ``t`` looks at samples ``t + lo .. t + hi`` inclusive.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(a: np.ndarray, lo: int, hi: int) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    m = a.shape[0] - hi
    if m <= 0:
        return np.empty((0, hi - lo + 1))
    return sliding_window_view(a[lo:lo + m + hi - lo], hi - lo + 1)


def window_min(a, lo: int, hi: int) -> np.ndarray:
    w = _windows(a, lo, hi)
    return w.min(axis=1) if len(w) else np.empty(0)


def window_max(a, lo: int, hi: int) -> np.ndarray:
    w = _windows(a, lo, hi)
    return w.max(axis=1) if len(w) else np.empty(0)


def until(left, right, lo: int, hi: int) -> np.ndarray:
    """out[t] = max over k in [t+lo, t+hi] of min(right[k], min(left[t..k]))."""
    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    n = min(len(left), len(right))
    m = max(n - hi, 0)
    out = np.empty(m)
    for t in range(m):
        run = np.minimum.accumulate(left[t:t + hi + 1])
        out[t] = np.max(np.minimum(right[t + lo:t + hi + 1], run[lo:]))
    return out


def radical_inverse(indices, base: int) -> np.ndarray:
    out = []
    for k in np.asarray(indices, dtype=np.int64).tolist():
        f, acc = 1.0, 0.0
        while k > 0:
            f = f / base
            acc += f * (k % base)
            k //= base
        out.append(acc)
    return np.array(out, dtype=np.float64)
