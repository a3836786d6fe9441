"""Dense multi-channel grid tensors and the fixed 3x3 convolution op set.

A grid tensor is a numpy array of shape ``(channels, height, width)``, or
``(batch, channels, height, width)`` for stacked samples, in float32 or
float64. Convolution kernels are arrays of shape
``(out_channels, in_channels, 3, 3)`` applied as cross-correlations, so a
stencil printed as a 3x3 matrix is used exactly as written.

The two precisions are never mixed inside one operation.
"""
import numpy as np

from . import _backend

__all__ = [
    "ShapeError", "PrecisionError", "grid", "check_kernel", "conv2d",
    "transposed_conv2d", "conv2d_kernel_grad", "elementwise", "tanh_map",
    "scale", "axpy", "norm2", "dot", "bilinear_resize",
]

DTYPES = (np.float32, np.float64)
PRECISIONS = {"f32": np.float32, "f64": np.float64}


class ShapeError(ValueError):
    """Tensor shapes do not conform for the requested operation."""


class PrecisionError(TypeError):
    """Operands carry different floating point precisions."""


def dtype_for(precision):
    """Map ``"f32"``/``"f64"`` (or a numpy dtype) to a numpy dtype."""
    if isinstance(precision, str):
        try:
            return np.dtype(PRECISIONS[precision])
        except KeyError:
            raise ValueError(f"precision must be 'f32' or 'f64', got {precision!r}") from None
    dt = np.dtype(precision)
    if dt.type not in DTYPES:
        raise ValueError(f"unsupported precision {dt}")
    return dt


def precision_name(dtype):
    return "f32" if np.dtype(dtype) == np.float32 else "f64"


def grid(data, precision=None):
    """Validate ``data`` as a grid tensor and return it as a contiguous array.

    Integer input is promoted to float64 unless ``precision`` says otherwise.
    """
    arr = np.asarray(data)
    if precision is not None:
        arr = arr.astype(dtype_for(precision), copy=False)
    elif arr.dtype.type not in DTYPES:
        arr = arr.astype(np.float64)
    if arr.ndim not in (3, 4):
        raise ShapeError(f"grid tensors are rank 3 or 4, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ShapeError(f"grid tensor dimensions must be positive, got {arr.shape}")
    return np.ascontiguousarray(arr)


def check_kernel(kernel):
    k = np.asarray(kernel)
    if k.ndim != 4 or k.shape[2:] != (3, 3):
        raise ShapeError(f"kernels must have shape (out, in, 3, 3), got {k.shape}")
    return k


def _same_precision(*arrays):
    dt = arrays[0].dtype
    for a in arrays[1:]:
        if a.dtype != dt:
            raise PrecisionError(f"mixed precision operands: {dt} and {a.dtype}")
    return dt


def _batched(x):
    """Return ``(x4, was_rank3)`` with ``x4`` a contiguous rank-4 view."""
    x = grid(x)
    if x.ndim == 3:
        return x[None], True
    return x, False


def _unbatch(y, was_rank3):
    return y[0] if was_rank3 else y


def _kernel_like(kernel, dtype):
    k = check_kernel(kernel)
    if k.dtype != dtype:
        if k.dtype.type in DTYPES:
            raise PrecisionError(f"kernel precision {k.dtype} differs from input {dtype}")
        k = k.astype(dtype)
    return np.ascontiguousarray(k)


def conv2d(x, kernel, stride=1, padding=None):
    """3x3 cross-correlation.

    ``stride=1`` pads one zero cell on every side (zero Dirichlet boundary) and
    preserves the grid size. ``stride=2`` uses no padding and maps an odd
    size ``H`` to ``(H - 1) // 2``, so ``2**k - 1`` grids nest exactly.
    """
    x4, squeeze = _batched(x)
    k = _kernel_like(kernel, x4.dtype)
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")
    expected_pad = 1 if stride == 1 else 0
    if padding is None:
        padding = expected_pad
    if padding != expected_pad:
        raise ValueError(f"stride {stride} requires padding {expected_pad}, got {padding}")
    if x4.shape[1] != k.shape[1]:
        raise ShapeError(f"input has {x4.shape[1]} channels, kernel expects {k.shape[1]}")
    kern = _backend.kernels
    if stride == 1:
        y = kern.conv_s1(x4, k, _backend.num_threads)
    else:
        h, w = x4.shape[2:]
        if h % 2 == 0 or w % 2 == 0 or h < 3 or w < 3:
            raise ShapeError(f"stride-2 convolution needs odd sizes >= 3, got {h}x{w}")
        y = kern.conv_s2(x4, k, _backend.num_threads)
    return _unbatch(y, squeeze)


def transposed_conv2d(x, kernel):
    """Matrix transpose of the stride-2 :func:`conv2d` with the same kernel.

    ``x`` has ``kernel.shape[0]`` channels; the output has ``kernel.shape[1]``
    channels and size ``2 * M + 1`` for input size ``M``.
    """
    x4, squeeze = _batched(x)
    k = _kernel_like(kernel, x4.dtype)
    if x4.shape[1] != k.shape[0]:
        raise ShapeError(
            f"transposed conv input has {x4.shape[1]} channels, kernel output side is {k.shape[0]}")
    y = _backend.kernels.tconv_s2(x4, k, _backend.num_threads)
    return _unbatch(y, squeeze)


def conv2d_input_grad(grad_out, kernel, stride):
    """Gradient of ``sum(grad_out * conv2d(x, kernel, stride))`` w.r.t. ``x``."""
    if stride == 2:
        return transposed_conv2d(grad_out, kernel)
    k = check_kernel(kernel)
    # adjoint of a zero-padded correlation: flip spatially, swap channel roles
    flipped = np.ascontiguousarray(k[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return conv2d(grad_out, flipped, stride=1)


def conv2d_kernel_grad(x, grad_out, stride):
    """Gradient of ``sum(grad_out * conv2d(x, K, stride))`` w.r.t. ``K``.

    For rank-4 inputs the batch contributions are summed.
    """
    x4, _ = _batched(x)
    g4, _ = _batched(grad_out)
    _same_precision(x4, g4)
    fn = _backend.kernels.conv_s1_wgrad if stride == 1 else _backend.kernels.conv_s2_wgrad
    return fn(x4, g4, _backend.num_threads)


def _check_pair(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    _same_precision(a, b)
    return a, b


def elementwise(a, b, op):
    """Pointwise ``"mul"`` or ``"add"`` of two same-shape tensors."""
    a, b = _check_pair(a, b)
    if op == "mul":
        return a * b
    if op == "add":
        return a + b
    raise ValueError(f"op must be 'mul' or 'add', got {op!r}")


def tanh_map(a):
    return np.tanh(a)


def scale(a, s):
    a = np.asarray(a)
    return a * a.dtype.type(s)


def axpy(a, b, alpha):
    """Return ``alpha * a + b``."""
    a, b = _check_pair(a, b)
    return a.dtype.type(alpha) * a + b


def norm2(a):
    """Euclidean norm over every entry."""
    a = np.asarray(a)
    return float(np.sqrt(np.vdot(a.ravel(), a.ravel())))


def dot(a, b):
    a, b = _check_pair(a, b)
    return float(np.vdot(a.ravel(), b.ravel()))


def _resize_matrix(n_in, n_out, dtype):
    """Corner-aligned linear interpolation matrix of shape (n_out, n_in)."""
    m = np.zeros((n_out, n_in), dtype=dtype)
    if n_in == 1 or n_out == 1:
        # a single source sample spreads everywhere; a single target takes the first
        m[:, 0] = 1
        return m
    pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - lo
    rows = np.arange(n_out)
    m[rows, lo] = 1 - frac
    m[rows, lo + 1] += frac
    return m


def bilinear_resize(x, new_height, new_width):
    """Separable bilinear resize with corner-aligned sample coordinates."""
    if int(new_height) < 1 or int(new_width) < 1:
        raise ValueError(f"target size must be positive, got {new_height}x{new_width}")
    x = grid(x)
    h, w = x.shape[-2:]
    if (h, w) == (new_height, new_width):
        return x.copy()
    rows = _resize_matrix(h, int(new_height), x.dtype)
    cols = _resize_matrix(w, int(new_width), x.dtype)
    return np.ascontiguousarray(rows @ x @ cols.T)
