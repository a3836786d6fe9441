import numpy as np
import pytest
from hypothesis import given, strategies as st

from mgsolve import _backend
from mgsolve import tensor as T
from oracles import naive_conv

LAPLACIAN = np.array([[0, -1, 0], [-1, 4, -1], [0, -1, 0]], float).reshape(1, 1, 3, 3)

odd_sizes = st.sampled_from([3, 5, 7, 9])


def test_laplacian_on_ones(backend):
    y = T.conv2d(np.ones((1, 3, 3)), LAPLACIAN)
    np.testing.assert_array_equal(y[0], [[2, 1, 2], [1, 0, 1], [2, 1, 2]])


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_matches_direct_loops(backend, rng, stride):
    x = rng.standard_normal((2, 3, 9, 7))
    k = rng.standard_normal((4, 3, 3, 3))
    np.testing.assert_allclose(T.conv2d(x, k, stride=stride), naive_conv(x, k, stride), rtol=1e-12, atol=1e-12)


@given(n=odd_sizes, cin=st.integers(1, 3), cout=st.integers(1, 3), seed=st.integers(0, 2**16))
def test_stride2_shape_and_values(n, cin, cout, seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((1, cin, n, n))
    k = r.standard_normal((cout, cin, 3, 3))
    y = T.conv2d(x, k, stride=2)
    assert y.shape == (1, cout, (n - 1) // 2, (n - 1) // 2)
    np.testing.assert_allclose(y, naive_conv(x, k, 2), atol=1e-12)


def test_5x5_stride2_gives_2x2():
    assert T.conv2d(np.ones((1, 5, 5)), LAPLACIAN, stride=2).shape == (1, 2, 2)


@given(m=st.integers(1, 6), cin=st.integers(1, 3), cout=st.integers(1, 3), seed=st.integers(0, 2**16))
def test_transposed_conv_is_adjoint(m, cin, cout, seed):
    r = np.random.default_rng(seed)
    n = 2 * m + 1
    x = r.standard_normal((2, cin, n, n))
    y = r.standard_normal((2, cout, m, m))
    k = r.standard_normal((cout, cin, 3, 3))
    lhs = T.dot(T.conv2d(x, k, stride=2), y)
    rhs = T.dot(x, T.transposed_conv2d(y, k))
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_transposed_conv_size(backend):
    y = T.transposed_conv2d(np.ones((1, 3, 3)), np.ones((1, 2, 3, 3)))
    assert y.shape == (2, 7, 7)


def test_backends_agree(rng):
    if len(_backend.available()) < 2:
        pytest.skip("compiled kernels not built")
    x = rng.standard_normal((2, 3, 15, 15))
    k = rng.standard_normal((3, 3, 3, 3))
    g1 = rng.standard_normal((2, 3, 15, 15))
    g2 = rng.standard_normal((2, 3, 7, 7))
    results = {}
    for name in ("python", "compiled"):
        prev = _backend.use(name)
        try:
            results[name] = [T.conv2d(x, k), T.conv2d(x, k, 2), T.transposed_conv2d(g2, k),
                             T.conv2d_kernel_grad(x, g1, 1), T.conv2d_kernel_grad(x, g2, 2)]
        finally:
            _backend.use(prev)
    for a, b in zip(results["python"], results["compiled"]):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_thread_count_does_not_change_results(rng):
    if "compiled" not in _backend.available():
        pytest.skip("compiled kernels not built")
    x = rng.standard_normal((2, 4, 31, 31))
    k = rng.standard_normal((4, 4, 3, 3))
    prev = _backend.use("compiled")
    try:
        _backend.set_threads(0)
        base = [T.conv2d(x, k), T.conv2d_kernel_grad(x, x, 1)]
        _backend.set_threads(3)
        again = [T.conv2d(x, k), T.conv2d_kernel_grad(x, x, 1)]
    finally:
        _backend.set_threads(0)
        _backend.use(prev)
    for a, b in zip(base, again):
        np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("stride", [1, 2])
def test_input_grad_is_adjoint(backend, rng, stride):
    x = rng.standard_normal((2, 3, 9, 9))
    k = rng.standard_normal((2, 3, 3, 3))
    g = rng.standard_normal(T.conv2d(x, k, stride).shape)
    lhs = T.dot(T.conv2d(x, k, stride), g)
    rhs = T.dot(x, T.conv2d_input_grad(g, k, stride))
    assert lhs == pytest.approx(rhs, rel=1e-12)


@pytest.mark.parametrize("stride", [1, 2])
def test_kernel_grad_matches_linear_functional(backend, rng, stride):
    x = rng.standard_normal((2, 3, 9, 9))
    g = rng.standard_normal((2, 2, *T.conv2d(x, np.zeros((2, 3, 3, 3)), stride).shape[2:]))
    grad = T.conv2d_kernel_grad(x, g, stride)
    # the functional is linear in K, so each entry is the response to a unit kernel
    expected = np.zeros((2, 3, 3, 3))
    for idx in np.ndindex(expected.shape):
        e = np.zeros((2, 3, 3, 3))
        e[idx] = 1
        expected[idx] = T.dot(naive_conv(x, e, stride), g)
    np.testing.assert_allclose(grad, expected, rtol=1e-12, atol=1e-12)


def test_f32_stays_f32(backend):
    x = np.ones((1, 1, 7, 7), np.float32)
    k = np.ones((1, 1, 3, 3), np.float32)
    assert T.conv2d(x, k).dtype == np.float32
    assert T.conv2d(x, k, 2).dtype == np.float32
    assert T.transposed_conv2d(np.ones((1, 1, 3, 3), np.float32), k).dtype == np.float32


def test_shape_errors():
    k = np.ones((1, 1, 3, 3))
    with pytest.raises(T.ShapeError):
        T.conv2d(np.ones((1, 6, 6)), k, stride=2)
    with pytest.raises(T.ShapeError):
        T.conv2d(np.ones((2, 5, 5)), k)
    with pytest.raises(T.ShapeError):
        T.conv2d(np.ones((5, 5)), k)
    with pytest.raises(T.ShapeError):
        T.conv2d(np.ones((1, 5, 5)), np.ones((1, 1, 5, 5)))
    with pytest.raises(ValueError):
        T.conv2d(np.ones((1, 5, 5)), k, stride=2, padding=1)
    with pytest.raises(ValueError):
        T.conv2d(np.ones((1, 5, 5)), k, stride=3)
    with pytest.raises(T.ShapeError):
        T.elementwise(np.ones((1, 3, 3)), np.ones((1, 5, 5)), "mul")


def test_mixed_precision_rejected():
    with pytest.raises(T.PrecisionError):
        T.conv2d(np.ones((1, 5, 5), np.float32), np.ones((1, 1, 3, 3)))
    with pytest.raises(T.PrecisionError):
        T.elementwise(np.ones((1, 3, 3), np.float32), np.ones((1, 3, 3)), "add")
    with pytest.raises(ValueError):
        T.dtype_for("f16")


def test_pointwise_helpers():
    a = np.full((1, 2, 2), 3.0)
    b = np.full((1, 2, 2), 2.0)
    np.testing.assert_array_equal(T.elementwise(a, b, "mul"), 6.0)
    np.testing.assert_array_equal(T.axpy(a, b, -1.0), -1.0)
    assert T.norm2(a) == pytest.approx(6.0)
    assert T.dot(a, b) == pytest.approx(24.0)
    np.testing.assert_allclose(T.tanh_map(np.zeros((1, 1, 1))), 0.0)


class TestBilinearResize:
    def test_corners_and_constants(self, rng):
        x = rng.random((1, 5, 5))
        y = T.bilinear_resize(x, 9, 9)
        assert y.shape == (1, 9, 9)
        for r, c in [(0, 0), (0, -1), (-1, 0), (-1, -1)]:
            assert y[0, r, c] == pytest.approx(x[0, r, c])
        np.testing.assert_allclose(T.bilinear_resize(np.full((1, 4, 6), 2.5), 11, 3), 2.5)

    def test_linear_fields_are_reproduced(self):
        i, j = np.meshgrid(np.linspace(0, 1, 5), np.linspace(0, 1, 4), indexing="ij")
        y = T.bilinear_resize((2 * i - 3 * j)[None], 13, 7)
        ii, jj = np.meshgrid(np.linspace(0, 1, 13), np.linspace(0, 1, 7), indexing="ij")
        np.testing.assert_allclose(y[0], 2 * ii - 3 * jj, atol=1e-12)

    def test_same_size_is_copy(self, rng):
        x = rng.random((1, 4, 4))
        y = T.bilinear_resize(x, 4, 4)
        np.testing.assert_array_equal(x, y)
        assert y is not x

    def test_doubling_keeps_samples(self, rng):
        # corner-aligned 5 -> 9 puts old samples at even indices
        x = rng.random((1, 5, 5))
        np.testing.assert_allclose(T.bilinear_resize(x, 9, 9)[0, ::2, ::2], x[0], atol=1e-15)
