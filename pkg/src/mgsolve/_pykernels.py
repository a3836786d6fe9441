"""Pure numpy implementations of the 3x3 convolution kernels.

Every function takes and returns C-contiguous rank-4 arrays laid out as
(batch, channel, row, column). Kernels are (out_channels, in_channels, 3, 3)
and act as cross-correlations. These are the reference fallback for
:mod:`mgsolve._ckernels` and share its signatures exactly.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(xp, stride):
    # (n, c, oh, ow, 3, 3) view of every 3x3 input window
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))
    if stride == 2:
        win = win[:, :, ::2, ::2]
    return win


def conv_s1(x, k, num_threads=0):
    """Size-preserving convolution with zero padding of one."""
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.einsum("nchwab,ocab->nohw", _windows(xp, 1), k, optimize=True)
    return np.ascontiguousarray(out)


def conv_s2(x, k, num_threads=0):
    """Stride-2 convolution without padding: (H, W) -> ((H-1)/2, (W-1)/2)."""
    out = np.einsum("nchwab,ocab->nohw", _windows(x, 2), k, optimize=True)
    return np.ascontiguousarray(out)


def conv_s1_wgrad(x, gy, num_threads=0):
    """Kernel gradient of :func:`conv_s1` given the output gradient ``gy``."""
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.einsum("nchwab,nohw->ocab", _windows(xp, 1), gy, optimize=True)
    return np.ascontiguousarray(out)


def conv_s2_wgrad(x, gy, num_threads=0):
    """Kernel gradient of :func:`conv_s2` given the output gradient ``gy``."""
    out = np.einsum("nchwab,nohw->ocab", _windows(x, 2), gy, optimize=True)
    return np.ascontiguousarray(out)


def tconv_s2(x, k, num_threads=0):
    """Exact adjoint of :func:`conv_s2`: (M, M) -> (2M+1, 2M+1)."""
    n, o, m, mw = x.shape
    c = k.shape[1]
    y = np.zeros((n, c, 2 * m + 1, 2 * mw + 1), dtype=x.dtype)
    # (n, c, m, mw, 3, 3): contribution of each coarse point to its 3x3 patch
    patches = np.einsum("nohw,ocab->nchwab", x, k, optimize=True)
    for a in range(3):
        for b in range(3):
            y[:, :, a:a + 2 * m:2, b:b + 2 * mw:2] += patches[..., a, b]
    return y
