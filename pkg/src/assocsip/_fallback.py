"""Pure numpy versions of the hot kernels.

Every routine performs its floating-point additions in the same order as the
Cython implementation in ``_kernels.pyx``, so the two backends agree bit for bit.
"""
import numpy as np


def prefix_scan(a):
    """Cumulative sums along every axis of ``a``, in place (axis 0 first)."""
    for ax in range(a.ndim):
        np.cumsum(a, axis=ax, out=a)
    return a


def _corner_sign(mask, d):
    # a corner taking ``hi`` on popcount(mask) axes enters with sign (-1)^(d - popcount)
    return -1.0 if (d - bin(mask).count("1")) % 2 else 1.0


def rect_sums(cum, lo, hi):
    """Inclusion-exclusion sums of half-open boxes (lo, hi] over a padded prefix grid.

    ``cum`` has shape ``extent + 1`` with zeros along every leading face;
    ``lo`` and ``hi`` are integer arrays of shape (Q, d).
    """
    d = cum.ndim
    out = np.zeros(lo.shape[0], dtype=np.float64)
    for mask in range(1 << d):
        idx = tuple(hi[:, s] if (mask >> s) & 1 else lo[:, s] for s in range(d))
        out += _corner_sign(mask, d) * cum[idx]
    return out


def ma_filter(z, kernel):
    """X_j = sum_i a_i Z_{j-i} for every j whose full kernel window lies inside ``z``."""
    out_shape = tuple(zs - ks + 1 for zs, ks in zip(z.shape, kernel.shape))
    out = np.zeros(out_shape, dtype=np.float64)
    for i in np.ndindex(*kernel.shape):
        a = kernel[i]
        if a == 0.0:
            continue
        window = tuple(
            slice(ks - 1 - i_s, ks - 1 - i_s + n)
            for ks, i_s, n in zip(kernel.shape, i, out_shape)
        )
        out += a * z[window]
    return out
