"""Reverse-mode differentiation over the fixed grid-tensor op set.

A :class:`Tape` records every operation applied to its nodes in execution
order, which is already a topological order. :meth:`Tape.backward` walks the
record in reverse and accumulates gradients into the :class:`ParamStore` the
parameters came from. Gradients accumulate until :meth:`ParamStore.zero_grad`.

A tape built with ``record=False`` evaluates the same graph without keeping
anything, which is how inference runs.
"""
from dataclasses import dataclass

import numpy as np

from . import tensor as T

__all__ = ["Node", "ParamStore", "Tape", "record_forward", "backward",
           "grad_check", "GradCheckReport", "OPS"]


class Node:
    __slots__ = ("value", "op", "inputs", "attrs", "requires_grad", "store", "name", "grad")

    def __init__(self, value, op=None, inputs=(), attrs=None, requires_grad=False):
        self.value = value
        self.op = op
        self.inputs = inputs
        self.attrs = attrs or {}
        self.requires_grad = requires_grad
        self.store = None
        self.name = None
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = self.name or self.op or "const"
        return f"Node({label}, shape={self.value.shape})"


class ParamStore:
    """Named learnable arrays plus same-shaped gradient accumulators."""

    def __init__(self, params=None):
        self.params = {}
        self.grads = {}
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name, value):
        if name in self.params:
            raise KeyError(f"parameter {name!r} already registered")
        value = np.array(value, copy=True)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def names(self):
        return list(self.params)

    def __getitem__(self, name):
        return self.params[name]

    def __setitem__(self, name, value):
        if name not in self.params:
            raise KeyError(f"unknown parameter {name!r}")
        value = np.asarray(value)
        if value.shape != self.params[name].shape:
            raise T.ShapeError(f"{name}: shape {value.shape} != {self.params[name].shape}")
        self.params[name] = value.astype(self.params[name].dtype, copy=True)

    def __contains__(self, name):
        return name in self.params

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def zero_grad(self):
        for g in self.grads.values():
            g[...] = 0

    def size(self):
        """Total number of scalar parameters."""
        return int(sum(p.size for p in self.params.values()))

    def astype(self, dtype):
        """Copy with every parameter cast to ``dtype``."""
        new = self.__class__.__new__(self.__class__)
        new.__dict__.update(self.__dict__)
        new.params = {k: v.astype(dtype) for k, v in self.params.items()}
        new.grads = {k: np.zeros_like(v) for k, v in new.params.items()}
        return new


# -- op registry --------------------------------------------------------------
# forward(values, attrs) -> output
# backward(grad, values, output, attrs) -> tuple of input gradients


def _conv_fwd(v, a):
    return T.conv2d(v[0], v[1], stride=a["stride"])


def _conv_bwd(g, v, out, a):
    s = a["stride"]
    return T.conv2d_input_grad(g, v[1], s), T.conv2d_kernel_grad(v[0], g, s)


def _tconv_fwd(v, a):
    return T.transposed_conv2d(v[0], v[1])


def _tconv_bwd(g, v, out, a):
    return T.conv2d(g, v[1], stride=2), T.conv2d_kernel_grad(g, v[0], 2)


def _bias_fwd(v, a):
    x, b = v
    return x + b.reshape((-1, 1, 1))


def _bias_bwd(g, v, out, a):
    axes = (0, 2, 3) if g.ndim == 4 else (1, 2)
    return g, g.sum(axis=axes)


@dataclass(frozen=True)
class Op:
    forward: object
    backward: object


OPS = {
    "conv2d": Op(_conv_fwd, _conv_bwd),
    "transposed_conv2d": Op(_tconv_fwd, _tconv_bwd),
    "mul": Op(lambda v, a: T.elementwise(v[0], v[1], "mul"),
              lambda g, v, out, a: (g * v[1], g * v[0])),
    "add": Op(lambda v, a: T.elementwise(v[0], v[1], "add"),
              lambda g, v, out, a: (g, g)),
    "sub": Op(lambda v, a: T.axpy(v[1], v[0], -1.0),
              lambda g, v, out, a: (g, -g)),
    "add_bias": Op(_bias_fwd, _bias_bwd),
    "tanh": Op(lambda v, a: T.tanh_map(v[0]),
               lambda g, v, out, a: (g * (1 - out * out),)),
    "scale": Op(lambda v, a: T.scale(v[0], a["s"]),
                lambda g, v, out, a: (g * g.dtype.type(a["s"]),)),
    "identity": Op(lambda v, a: v[0], lambda g, v, out, a: (g,)),
    "sum": Op(lambda v, a: np.asarray(v[0].sum(), dtype=v[0].dtype),
              lambda g, v, out, a: (np.full_like(v[0], g),)),
    "sumsq": Op(lambda v, a: np.asarray(np.vdot(v[0].ravel(), v[0].ravel()), dtype=v[0].dtype),
                lambda g, v, out, a: (2 * g * v[0],)),
}


class Tape:
    """Recorder for one computation graph."""

    def __init__(self, record=True):
        self.record_enabled = record
        self.nodes = []

    # leaves
    def constant(self, value):
        return Node(np.asarray(value))

    def variable(self, value):
        """Leaf whose gradient is stored on the node itself (``node.grad``)."""
        node = Node(np.asarray(value), requires_grad=self.record_enabled)
        if self.record_enabled:
            self.nodes.append(node)
        return node

    def param(self, store, name):
        node = Node(store[name], requires_grad=self.record_enabled)
        node.store = store
        node.name = name
        if self.record_enabled:
            self.nodes.append(node)
        return node

    def record(self, op, *inputs, **attrs):
        inputs = tuple(x if isinstance(x, Node) else self.constant(x) for x in inputs)
        out = OPS[op].forward([x.value for x in inputs], attrs)
        needs = self.record_enabled and any(x.requires_grad for x in inputs)
        node = Node(out, op, inputs if needs else (), attrs, needs)
        if needs:
            self.nodes.append(node)
        return node

    # convenience wrappers
    def conv2d(self, x, k, stride=1):
        return self.record("conv2d", x, k, stride=stride)

    def transposed_conv2d(self, x, k):
        return self.record("transposed_conv2d", x, k)

    def mul(self, a, b):
        return self.record("mul", a, b)

    def add(self, a, b):
        return self.record("add", a, b)

    def sub(self, a, b):
        return self.record("sub", a, b)

    def add_bias(self, x, b):
        return self.record("add_bias", x, b)

    def tanh(self, x):
        return self.record("tanh", x)

    def scale(self, x, s):
        return self.record("scale", x, s=s)

    def sum(self, x):
        return self.record("sum", x)

    def sumsq(self, x):
        return self.record("sumsq", x)

    def backward(self, loss):
        """Accumulate d(loss)/d(leaf) into parameter stores and variable leaves."""
        if np.ndim(loss.value) != 0:
            raise T.ShapeError(f"backward needs a scalar loss, got shape {np.shape(loss.value)}")
        if not loss.requires_grad:
            return
        grads = {id(loss): np.ones_like(loss.value)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.op is None:
                if node.store is not None:
                    node.store.grads[node.name] += g
                else:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            values = [x.value for x in node.inputs]
            in_grads = OPS[node.op].backward(g, values, node.value, node.attrs)
            for x, gx in zip(node.inputs, in_grads):
                if not x.requires_grad:
                    continue
                key = id(x)
                if key in grads:
                    grads[key] = grads[key] + gx
                else:
                    grads[key] = gx


def record_forward(tape, op, *inputs, **attrs):
    return tape.record(op, *inputs, **attrs)


def backward(tape, loss):
    tape.backward(loss)


# grad_check compares entries below this fraction of the largest gradient on that scale
GRAD_CHECK_FLOOR = 1e-4


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: str
    checked: int
    tol: float

    @property
    def passed(self):
        return self.max_rel_error < self.tol

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} max relative error {self.max_rel_error:.3e} "
                f"(tol {self.tol:.0e}, {self.checked} entries, worst {self.worst})")


def _loss_value(build_graph, store):
    tape = Tape(record=False)
    return float(build_graph(tape, store).value)


def grad_check(build_graph, params, eps=1e-6, tol=1e-5, names=None):
    """Compare analytic gradients with central finite differences.

    ``build_graph(tape, params)`` must return the scalar loss node. Each entry's
    error is ``|analytic - fd| / max(|analytic|, |fd|, floor)`` where ``floor``
    is ``1e-4`` times the largest finite-difference gradient. Entries far
    below the gradient's scale carry finite-difference rounding noise of order
    ``machine_eps * |loss| / eps``; the floor compares them on that scale
    instead of their own.
    """
    names = list(names or params.names())
    for n in names:
        if params[n].dtype != np.float64:
            raise TypeError("grad_check requires float64 parameters")
    params.zero_grad()
    tape = Tape()
    loss = build_graph(tape, params)
    if not np.isfinite(loss.value):
        raise FloatingPointError("non-finite loss in grad_check")
    tape.backward(loss)
    analytic = {n: params.grads[n].copy() for n in names}

    numeric = {}
    for n in names:
        p = params.params[n]
        fd = np.zeros_like(p)
        flat = p.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = _loss_value(build_graph, params)
            flat[i] = orig - eps
            down = _loss_value(build_graph, params)
            flat[i] = orig
            fd.reshape(-1)[i] = (up - down) / (2 * eps)
        if not (np.all(np.isfinite(fd)) and np.all(np.isfinite(analytic[n]))):
            raise FloatingPointError(f"non-finite gradient for {n}")
        numeric[n] = fd

    scale = max((np.abs(f).max() for f in numeric.values() if f.size), default=0.0)
    floor = max(GRAD_CHECK_FLOOR * scale, np.finfo(np.float64).tiny)
    worst, worst_name, checked = 0.0, "", 0
    for n in names:
        a, f = analytic[n], numeric[n]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
        err = np.abs(a - f) / denom
        checked += err.size
        if err.size and err.max() > worst:
            worst = float(err.max())
            idx = ", ".join(str(int(i)) for i in np.unravel_index(err.argmax(), err.shape))
            worst_name = f"{n}[{idx}]"
    return GradCheckReport(worst, worst_name, checked, tol)
