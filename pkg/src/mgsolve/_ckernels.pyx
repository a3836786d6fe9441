# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled 3x3 convolution kernels.

Same signatures and semantics as :mod:`mgsolve._pykernels`. Work is split
over independent output planes (or kernel entries for the weight gradients),
so each output value is accumulated by exactly one thread in a fixed order
and results do not depend on ``num_threads``.
"""
import numpy as np

from cython.parallel cimport prange
from libc.stdlib cimport malloc, free

ctypedef fused real:
    float
    double


cdef void _conv_s1_plane(real* y, const real* x, const real* k, const real* zero,
                         Py_ssize_t C, Py_ssize_t H, Py_ssize_t W) noexcept nogil:
    # all nine taps fused so each output row is loaded and stored once per input channel;
    # rows outside the grid read from ``zero``
    cdef Py_ssize_t c, i, j
    cdef real k0, k1, k2, k3, k4, k5, k6, k7, k8
    cdef real* yr
    cdef const real* xc
    cdef const real* r0
    cdef const real* r1
    cdef const real* r2
    for i in range(H):
        yr = y + i * W
        for c in range(C):
            xc = x + c * H * W
            r0 = xc + (i - 1) * W if i > 0 else zero
            r1 = xc + i * W
            r2 = xc + (i + 1) * W if i < H - 1 else zero
            k0 = k[c * 9]
            k1 = k[c * 9 + 1]
            k2 = k[c * 9 + 2]
            k3 = k[c * 9 + 3]
            k4 = k[c * 9 + 4]
            k5 = k[c * 9 + 5]
            k6 = k[c * 9 + 6]
            k7 = k[c * 9 + 7]
            k8 = k[c * 9 + 8]
            if W == 1:
                yr[0] += k1 * r0[0] + k4 * r1[0] + k7 * r2[0]
                continue
            yr[0] += (k1 * r0[0] + k2 * r0[1] + k4 * r1[0] + k5 * r1[1]
                      + k7 * r2[0] + k8 * r2[1])
            for j in range(1, W - 1):
                yr[j] += (k0 * r0[j - 1] + k1 * r0[j] + k2 * r0[j + 1]
                          + k3 * r1[j - 1] + k4 * r1[j] + k5 * r1[j + 1]
                          + k6 * r2[j - 1] + k7 * r2[j] + k8 * r2[j + 1])
            yr[W - 1] += (k0 * r0[W - 2] + k1 * r0[W - 1] + k3 * r1[W - 2] + k4 * r1[W - 1]
                          + k6 * r2[W - 2] + k7 * r2[W - 1])


cdef void _conv_s2_plane(real* y, const real* x, const real* k,
                         Py_ssize_t C, Py_ssize_t H, Py_ssize_t W) noexcept nogil:
    cdef Py_ssize_t OH = (H - 1) // 2
    cdef Py_ssize_t OW = (W - 1) // 2
    cdef Py_ssize_t c, i, j, s
    cdef real k0, k1, k2, k3, k4, k5, k6, k7, k8
    cdef real* yr
    cdef const real* r0
    cdef const real* r1
    cdef const real* r2
    for i in range(OH):
        yr = y + i * OW
        for c in range(C):
            r0 = x + (c * H + 2 * i) * W
            r1 = r0 + W
            r2 = r1 + W
            k0 = k[c * 9]
            k1 = k[c * 9 + 1]
            k2 = k[c * 9 + 2]
            k3 = k[c * 9 + 3]
            k4 = k[c * 9 + 4]
            k5 = k[c * 9 + 5]
            k6 = k[c * 9 + 6]
            k7 = k[c * 9 + 7]
            k8 = k[c * 9 + 8]
            for j in range(OW):
                s = 2 * j
                yr[j] += (k0 * r0[s] + k1 * r0[s + 1] + k2 * r0[s + 2]
                          + k3 * r1[s] + k4 * r1[s + 1] + k5 * r1[s + 2]
                          + k6 * r2[s] + k7 * r2[s + 1] + k8 * r2[s + 2])


cdef void _tconv_s2_plane(real* y, const real* x, const real* k,
                          Py_ssize_t O, Py_ssize_t C, Py_ssize_t M, Py_ssize_t MW) noexcept nogil:
    # y: one output plane (2M+1, 2MW+1) for input channel c; k points at k[0, c].
    # Written as a gather per output row: even columns take taps 0 and 2 of
    # neighbouring coarse points, odd columns tap 1.
    cdef Py_ssize_t W = 2 * MW + 1
    cdef Py_ssize_t o, a, i, j
    cdef real ka0, ka1, ka2
    cdef real* yr
    cdef const real* xr
    for o in range(O):
        for i in range(M):
            xr = x + (o * M + i) * MW
            for a in range(3):
                yr = y + (2 * i + a) * W
                ka0 = k[o * C * 9 + a * 3]
                ka1 = k[o * C * 9 + a * 3 + 1]
                ka2 = k[o * C * 9 + a * 3 + 2]
                yr[0] += ka0 * xr[0]
                for j in range(1, MW):
                    yr[2 * j] += ka0 * xr[j] + ka2 * xr[j - 1]
                yr[2 * MW] += ka2 * xr[MW - 1]
                for j in range(MW):
                    yr[2 * j + 1] += ka1 * xr[j]


cdef void _wgrad_s1_entry(real* out, const real* x, const real* gy, real* acc,
                          const real* zero,
                          Py_ssize_t N, Py_ssize_t C, Py_ssize_t O,
                          Py_ssize_t o, Py_ssize_t c,
                          Py_ssize_t H, Py_ssize_t W) noexcept nogil:
    # out: the 9 entries dk[o, c, :, :]; acc holds 9 rows of W partial sums
    cdef Py_ssize_t n, t, i, j
    cdef real total, gj
    cdef const real* g
    cdef const real* xc
    cdef const real* r0
    cdef const real* r1
    cdef const real* r2
    cdef real* a0 = acc
    cdef real* a1 = acc + W
    cdef real* a2 = acc + 2 * W
    cdef real* a3 = acc + 3 * W
    cdef real* a4 = acc + 4 * W
    cdef real* a5 = acc + 5 * W
    cdef real* a6 = acc + 6 * W
    cdef real* a7 = acc + 7 * W
    cdef real* a8 = acc + 8 * W
    for j in range(9 * W):
        acc[j] = 0
    for n in range(N):
        xc = x + (n * C + c) * H * W
        for i in range(H):
            g = gy + ((n * O + o) * H + i) * W
            r0 = xc + (i - 1) * W if i > 0 else zero
            r1 = xc + i * W
            r2 = xc + (i + 1) * W if i < H - 1 else zero
            # column j pairs with input column j + b - 1
            a1[0] += g[0] * r0[0]
            a4[0] += g[0] * r1[0]
            a7[0] += g[0] * r2[0]
            if W == 1:
                continue
            a2[0] += g[0] * r0[1]
            a5[0] += g[0] * r1[1]
            a8[0] += g[0] * r2[1]
            for j in range(1, W - 1):
                gj = g[j]
                a0[j] += gj * r0[j - 1]
                a1[j] += gj * r0[j]
                a2[j] += gj * r0[j + 1]
                a3[j] += gj * r1[j - 1]
                a4[j] += gj * r1[j]
                a5[j] += gj * r1[j + 1]
                a6[j] += gj * r2[j - 1]
                a7[j] += gj * r2[j]
                a8[j] += gj * r2[j + 1]
            gj = g[W - 1]
            a0[W - 1] += gj * r0[W - 2]
            a1[W - 1] += gj * r0[W - 1]
            a3[W - 1] += gj * r1[W - 2]
            a4[W - 1] += gj * r1[W - 1]
            a6[W - 1] += gj * r2[W - 2]
            a7[W - 1] += gj * r2[W - 1]
    for t in range(9):
        total = 0
        for j in range(W):
            total += acc[t * W + j]
        out[t] = total


cdef void _wgrad_s2_entry(real* out, const real* x, const real* gy, real* acc,
                          Py_ssize_t N, Py_ssize_t C, Py_ssize_t O,
                          Py_ssize_t o, Py_ssize_t c,
                          Py_ssize_t H, Py_ssize_t W) noexcept nogil:
    cdef Py_ssize_t OH = (H - 1) // 2
    cdef Py_ssize_t OW = (W - 1) // 2
    cdef Py_ssize_t n, t, a, i, j
    cdef real total, gj
    cdef const real* g
    cdef const real* r
    cdef real* a0
    cdef real* a1
    cdef real* a2
    for j in range(9 * OW):
        acc[j] = 0
    for n in range(N):
        for i in range(OH):
            g = gy + ((n * O + o) * OH + i) * OW
            for a in range(3):
                r = x + ((n * C + c) * H + 2 * i + a) * W
                a0 = acc + 3 * a * OW
                a1 = a0 + OW
                a2 = a1 + OW
                for j in range(OW):
                    gj = g[j]
                    a0[j] += gj * r[2 * j]
                    a1[j] += gj * r[2 * j + 1]
                    a2[j] += gj * r[2 * j + 2]
    for t in range(9):
        total = 0
        for j in range(OW):
            total += acc[t * OW + j]
        out[t] = total


def _dtype(real[:, :, :, ::1] x):
    if real is double:
        return np.float64
    return np.float32


def conv_s1(real[:, :, :, ::1] x, real[:, :, :, ::1] k, int num_threads=0):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = k.shape[0]
    out = np.zeros((N, O, H, W), dtype=_dtype(x))
    cdef real[:, :, :, ::1] y = out
    cdef real[::1] zero = np.zeros(W, dtype=_dtype(x))
    cdef Py_ssize_t t, n, o
    if N * O == 0 or H * W == 0:
        return out
    if num_threads > 1:
        for t in prange(N * O, nogil=True, num_threads=num_threads, schedule="static"):
            _conv_s1_plane(&y[t // O, t % O, 0, 0], &x[t // O, 0, 0, 0],
                           &k[t % O, 0, 0, 0], &zero[0], C, H, W)
    else:
        for t in range(N * O):
            n = t // O
            o = t % O
            _conv_s1_plane(&y[n, o, 0, 0], &x[n, 0, 0, 0], &k[o, 0, 0, 0], &zero[0], C, H, W)
    return out


def conv_s2(real[:, :, :, ::1] x, real[:, :, :, ::1] k, int num_threads=0):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = k.shape[0]
    cdef Py_ssize_t OH = (H - 1) // 2, OW = (W - 1) // 2
    out = np.zeros((N, O, OH, OW), dtype=_dtype(x))
    cdef real[:, :, :, ::1] y = out
    cdef Py_ssize_t t, n, o
    if N * O == 0 or OH * OW == 0:
        return out
    if num_threads > 1:
        for t in prange(N * O, nogil=True, num_threads=num_threads, schedule="static"):
            _conv_s2_plane(&y[t // O, t % O, 0, 0], &x[t // O, 0, 0, 0],
                           &k[t % O, 0, 0, 0], C, H, W)
    else:
        for t in range(N * O):
            n = t // O
            o = t % O
            _conv_s2_plane(&y[n, o, 0, 0], &x[n, 0, 0, 0], &k[o, 0, 0, 0], C, H, W)
    return out


def tconv_s2(real[:, :, :, ::1] x, real[:, :, :, ::1] k, int num_threads=0):
    cdef Py_ssize_t N = x.shape[0], O = x.shape[1], M = x.shape[2], MW = x.shape[3]
    cdef Py_ssize_t C = k.shape[1]
    out = np.zeros((N, C, 2 * M + 1, 2 * MW + 1), dtype=_dtype(x))
    cdef real[:, :, :, ::1] y = out
    cdef Py_ssize_t t, n, c
    if N * C == 0 or M * MW == 0:
        return out
    if num_threads > 1:
        for t in prange(N * C, nogil=True, num_threads=num_threads, schedule="static"):
            _tconv_s2_plane(&y[t // C, t % C, 0, 0], &x[t // C, 0, 0, 0],
                            &k[0, t % C, 0, 0], O, C, M, MW)
    else:
        for t in range(N * C):
            n = t // C
            c = t % C
            _tconv_s2_plane(&y[n, c, 0, 0], &x[n, 0, 0, 0], &k[0, c, 0, 0], O, C, M, MW)
    return out


def conv_s1_wgrad(real[:, :, :, ::1] x, real[:, :, :, ::1] gy, int num_threads=0):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = gy.shape[1]
    out = np.zeros((O, C, 3, 3), dtype=_dtype(x))
    cdef real[:, :, :, ::1] dk = out
    cdef real[::1] zero = np.zeros(max(W, 1), dtype=_dtype(x))
    cdef Py_ssize_t t
    cdef real* acc
    if O * C == 0 or N * H * W == 0:
        return out
    if num_threads > 1:
        for t in prange(O * C, nogil=True, num_threads=num_threads, schedule="static"):
            acc = <real*> malloc(9 * W * sizeof(real))
            _wgrad_s1_entry(&dk[t // C, t % C, 0, 0], &x[0, 0, 0, 0], &gy[0, 0, 0, 0],
                            acc, &zero[0], N, C, O, t // C, t % C, H, W)
            free(acc)
    else:
        acc = <real*> malloc(9 * W * sizeof(real))
        try:
            for t in range(O * C):
                _wgrad_s1_entry(&dk[t // C, t % C, 0, 0], &x[0, 0, 0, 0], &gy[0, 0, 0, 0],
                                acc, &zero[0], N, C, O, t // C, t % C, H, W)
        finally:
            free(acc)
    return out


def conv_s2_wgrad(real[:, :, :, ::1] x, real[:, :, :, ::1] gy, int num_threads=0):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = gy.shape[1]
    cdef Py_ssize_t OW = (W - 1) // 2
    out = np.zeros((O, C, 3, 3), dtype=_dtype(x))
    cdef real[:, :, :, ::1] dk = out
    cdef Py_ssize_t t
    cdef real* acc
    if O * C == 0 or N * OW * ((H - 1) // 2) == 0:
        return out
    if num_threads > 1:
        for t in prange(O * C, nogil=True, num_threads=num_threads, schedule="static"):
            acc = <real*> malloc(9 * OW * sizeof(real))
            _wgrad_s2_entry(&dk[t // C, t % C, 0, 0], &x[0, 0, 0, 0], &gy[0, 0, 0, 0],
                            acc, N, C, O, t // C, t % C, H, W)
            free(acc)
    else:
        acc = <real*> malloc(9 * OW * sizeof(real))
        try:
            for t in range(O * C):
                _wgrad_s2_entry(&dk[t // C, t % C, 0, 0], &x[0, 0, 0, 0], &gy[0, 0, 0, 0],
                                acc, N, C, O, t // C, t % C, H, W)
        finally:
            free(acc)
    return out
