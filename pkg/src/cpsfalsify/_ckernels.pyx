# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for the STL monitor and the Halton sampler.

Same contracts as ``_pykernels``; see that module for the semantics.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY
from libc.stdlib cimport free, malloc

cnp.import_array()


cdef void _sliding(const double[::1] a, Py_ssize_t lo, Py_ssize_t hi,
                   double[::1] out, bint take_max) noexcept nogil:
    # monotone deque over the window [t+lo, t+hi]
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t m = out.shape[0]
    cdef Py_ssize_t *dq
    cdef Py_ssize_t head = 0, tail = 0, t, j = lo
    cdef double v
    dq = <Py_ssize_t *> malloc((n + 1) * sizeof(Py_ssize_t))
    for t in range(m):
        while j <= t + hi:
            v = a[j]
            if take_max:
                while tail > head and a[dq[tail - 1]] <= v:
                    tail -= 1
            else:
                while tail > head and a[dq[tail - 1]] >= v:
                    tail -= 1
            dq[tail] = j
            tail += 1
            j += 1
        while dq[head] < t + lo:
            head += 1
        out[t] = a[dq[head]]
    free(dq)


def window_min(cnp.ndarray a, Py_ssize_t lo, Py_ssize_t hi):
    cdef const double[::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef Py_ssize_t m = av.shape[0] - hi
    if m < 0:
        m = 0
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] ov = out
    if m:
        _sliding(av, lo, hi, ov, False)
    return out


def window_max(cnp.ndarray a, Py_ssize_t lo, Py_ssize_t hi):
    cdef const double[::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef Py_ssize_t m = av.shape[0] - hi
    if m < 0:
        m = 0
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] ov = out
    if m:
        _sliding(av, lo, hi, ov, True)
    return out


def until(cnp.ndarray left, cnp.ndarray right, Py_ssize_t lo, Py_ssize_t hi):
    cdef const double[::1] l = np.ascontiguousarray(left, dtype=np.float64)
    cdef const double[::1] r = np.ascontiguousarray(right, dtype=np.float64)
    cdef Py_ssize_t n = min(l.shape[0], r.shape[0])
    cdef Py_ssize_t m = n - hi
    if m < 0:
        m = 0
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t t, k
    cdef double run, best, cand
    with nogil:
        for t in range(m):
            run = INFINITY
            best = -INFINITY
            for k in range(t, t + hi + 1):
                if l[k] < run:
                    run = l[k]
                if k >= t + lo:
                    cand = r[k] if r[k] < run else run
                    if cand > best:
                        best = cand
            ov[t] = best
    return out


def radical_inverse(cnp.ndarray indices, long base):
    cdef const long[::1] idx = np.ascontiguousarray(indices, dtype=np.int_)
    cdef Py_ssize_t n = idx.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    cdef long k, digit
    cdef double f, acc
    with nogil:
        for i in range(n):
            k = idx[i]
            f = 1.0
            acc = 0.0
            while k > 0:
                f = f / base
                digit = k % base
                acc = acc + f * digit
                k = k // base
            ov[i] = acc
    return out
