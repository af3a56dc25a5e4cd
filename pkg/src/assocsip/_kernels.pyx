# cython: language_level=3
"""Compiled hot loops: prefix scans, batched box sums, moving-average filtering.

Addition order mirrors ``_fallback.py`` exactly.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def prefix_scan(cnp.ndarray a):
    """Cumulative sums along every axis of a C-contiguous float64 array, in place."""
    if not a.flags.c_contiguous or a.dtype != np.float64:
        raise ValueError("prefix_scan needs a C-contiguous float64 array")
    cdef double[::1] flat = a.reshape(-1)
    cdef Py_ssize_t n = flat.shape[0]
    cdef Py_ssize_t ax, p, stride, length, outer, o, base, k, lane
    cdef int d = a.ndim
    for ax in range(d):
        stride = a.strides[ax] // 8
        length = a.shape[ax]
        if length < 2:
            continue
        outer = n // (stride * length)
        for o in range(outer):
            base = o * stride * length
            for k in range(1, length):
                p = base + k * stride
                for lane in range(stride):
                    flat[p + lane] = flat[p + lane - stride] + flat[p + lane]
    return a


def rect_sums(cnp.ndarray cum, const cnp.int64_t[:, :] lo, const cnp.int64_t[:, :] hi):
    """Inclusion-exclusion box sums over (lo, hi] on a padded prefix grid."""
    if not cum.flags.c_contiguous or cum.dtype != np.float64:
        raise ValueError("rect_sums needs a C-contiguous float64 grid")
    cdef int d = cum.ndim
    cdef const double[::1] flat = cum.reshape(-1)
    cdef Py_ssize_t q, nq = lo.shape[0]
    cdef int mask, s, ones
    cdef cnp.int64_t idx
    cdef double sign
    cdef cnp.int64_t[::1] strides = np.array([cum.strides[t] // 8 for t in range(d)], dtype=np.int64)
    out_arr = np.zeros(nq, dtype=np.float64)
    cdef double[::1] out = out_arr
    # corner loop outermost, matching the fallback's accumulation order per query
    for mask in range(1 << d):
        ones = 0
        for s in range(d):
            ones += (mask >> s) & 1
        sign = -1.0 if (d - ones) % 2 else 1.0
        for q in range(nq):
            idx = 0
            for s in range(d):
                if (mask >> s) & 1:
                    idx += hi[q, s] * strides[s]
                else:
                    idx += lo[q, s] * strides[s]
            out[q] = out[q] + sign * flat[idx]
    return out_arr


def _ma_filter3(const double[:, :, ::1] z, const double[:, :, ::1] kernel):
    cdef Py_ssize_t k0 = kernel.shape[0], k1 = kernel.shape[1], k2 = kernel.shape[2]
    cdef Py_ssize_t n0 = z.shape[0] - k0 + 1, n1 = z.shape[1] - k1 + 1, n2 = z.shape[2] - k2 + 1
    cdef Py_ssize_t i0, i1, i2, j0, j1, j2, o0, o1, o2
    cdef double a
    out_arr = np.zeros((n0, n1, n2), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    for i0 in range(k0):
        for i1 in range(k1):
            for i2 in range(k2):
                a = kernel[i0, i1, i2]
                if a == 0.0:
                    continue
                o0 = k0 - 1 - i0
                o1 = k1 - 1 - i1
                o2 = k2 - 1 - i2
                for j0 in range(n0):
                    for j1 in range(n1):
                        for j2 in range(n2):
                            out[j0, j1, j2] = out[j0, j1, j2] + a * z[j0 + o0, j1 + o1, j2 + o2]
    return out_arr


def ma_filter(z, kernel):
    """X_j = sum_i a_i Z_{j-i}; d <= 3 runs compiled, higher d defers to numpy."""
    d = z.ndim
    if d > 3:
        from assocsip import _fallback
        return _fallback.ma_filter(z, kernel)
    pad = (1,) * (3 - d)
    z3 = np.ascontiguousarray(z, dtype=np.float64).reshape(pad + z.shape)
    k3 = np.ascontiguousarray(kernel, dtype=np.float64).reshape(pad + kernel.shape)
    out = _ma_filter3(z3, k3)
    return out.reshape(tuple(zs - ks + 1 for zs, ks in zip(z.shape, kernel.shape)))
