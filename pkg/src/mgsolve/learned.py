"""Learnable multigrid solver: a nonlinear setup network and a linear solve network.

One set of 3x3 kernels serves every level and every grid size. The setup
network maps the coefficient field to one tensor per level; the solve network
is a multigrid-shaped ResNet whose only dependence on the problem is an
element-wise product with those tensors, so for fixed setup tensors it is a
linear map of the right-hand side.
"""
import math
import time

import numpy as np

from . import tensor as T
from .autodiff import ParamStore, Tape
from .discretization import apply_operator

SETUP_DEPTH = 4
DEFAULT_CHANNELS = 8


def parameter_shapes(channels):
    """Registry of parameter names and shapes, in serialization order."""
    c = channels
    shapes = {
        "coef_rechannel": (c, 1, 3, 3),
        "setup_rcnn": (c, c, 3, 3),
    }
    for i in range(SETUP_DEPTH):
        shapes[f"setup_resnet.{i}.weight"] = (c, c, 3, 3)
        shapes[f"setup_resnet.{i}.bias"] = (c,)
    shapes.update({
        "rhs_rechannel": (c, 1, 3, 3),
        "k_down": (c, c, 3, 3),
        "k_up": (c, c, 3, 3),
        "solve_rcnn": (c, c, 3, 3),
        "solve_tcnn": (c, c, 3, 3),
        "sol_rechannel": (1, c, 3, 3),
    })
    return shapes


class SolverWeights(ParamStore):
    """The complete, level-independent parameter set of the learned solver."""

    def __init__(self, params, channels=None):
        if channels is None:
            channels = np.shape(params["rhs_rechannel"])[0]
        expected = parameter_shapes(channels)
        if set(params) != set(expected):
            missing = sorted(set(expected) - set(params))
            extra = sorted(set(params) - set(expected))
            raise KeyError(f"weights do not match the registry: missing {missing}, unexpected {extra}")
        for name, shape in expected.items():
            if np.shape(params[name]) != shape:
                raise T.ShapeError(f"{name}: expected shape {shape}, got {np.shape(params[name])}")
        super().__init__({name: params[name] for name in expected})
        self.channels = channels

    @property
    def dtype(self):
        return self.params["k_down"].dtype


def init_weights(channels=DEFAULT_CHANNELS, seed=0, dtype=np.float64):
    """Uniform ``[-a, a]`` kernels with ``a = sqrt(1 / (9 * in_channels))``, zero biases."""
    if channels < 1:
        raise ValueError("channels must be positive")
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(channels).items():
        if len(shape) == 1:
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            a = math.sqrt(1.0 / (9 * shape[1]))
            params[name] = rng.uniform(-a, a, size=shape).astype(dtype)
    return SolverWeights(params, channels)


def level_for_grid(grid_n):
    """Number of learned-solver levels so the coarsest grid is 3x3."""
    k = int(round(math.log2(grid_n + 1))) if grid_n > 0 else 0
    if 2 ** k - 1 != grid_n or k < 2:
        raise ValueError(f"grid size must be 2**k - 1 with k >= 2, got {grid_n}")
    return k - 1


def _check_levels(n, level):
    if level < 1:
        raise ValueError("level must be positive")
    for _ in range(level - 1):
        if n < 3 or n % 2 == 0:
            raise T.ShapeError(f"grid cannot be halved {level - 1} times")
        n = (n - 1) // 2


# -- graph builders, shared by inference (record=False) and training ----------

def setup_on_tape(tape, weights, coef, level):
    """Setup network; returns the list of per-level setup-tensor nodes."""
    _check_levels(coef.shape[-1], level)
    p = lambda name: tape.param(weights, name)  # noqa: E731
    x = tape.conv2d(coef, p("coef_rechannel"))
    layers = [(p(f"setup_resnet.{i}.weight"), p(f"setup_resnet.{i}.bias"))
              for i in range(SETUP_DEPTH)]
    rcnn = p("setup_rcnn")
    outs = []
    for lvl in range(level):
        y = x
        for k, b in layers:
            y = tape.add(tape.tanh(tape.add_bias(tape.conv2d(y, k), b)), y)
        outs.append(y)
        if lvl < level - 1:
            x = tape.conv2d(x, rcnn, stride=2)
    return outs


def solve_on_tape(tape, weights, setup_outs, rhs, level):
    """Solve network: one down and one up sweep, bias- and activation-free."""
    if len(setup_outs) != level:
        raise ValueError(f"{len(setup_outs)} setup tensors for {level} levels")
    p = lambda name: tape.param(weights, name)  # noqa: E731
    k_down, k_up = p("k_down"), p("k_up")
    rcnn, tcnn = p("solve_rcnn"), p("solve_tcnn")
    x = [None] * level
    x[0] = tape.conv2d(rhs, p("rhs_rechannel"))
    for lvl in range(level):
        so = setup_outs[lvl]
        if so.shape != x[lvl].shape:
            raise T.ShapeError(f"level {lvl}: setup tensor {so.shape} vs state {x[lvl].shape}")
        x[lvl] = tape.add(tape.conv2d(tape.mul(so, x[lvl]), k_down), x[lvl])
        if lvl < level - 1:
            x[lvl + 1] = tape.conv2d(x[lvl], rcnn, stride=2)
    for lvl in reversed(range(level)):
        x[lvl] = tape.add(tape.conv2d(tape.mul(setup_outs[lvl], x[lvl]), k_up), x[lvl])
        if lvl > 0:
            x[lvl - 1] = tape.add(x[lvl - 1], tape.transposed_conv2d(x[lvl], tcnn))
    return tape.conv2d(x[0], p("sol_rechannel"))


def _cast(weights, dtype):
    return weights if weights.dtype == dtype else weights.astype(dtype)


def setup(weights, coef, level):
    """Per-level setup tensors for ``coef`` of shape (1, N, N) or (B, 1, N, N)."""
    coef = T.grid(coef)
    if coef.shape[-3] != 1:
        raise T.ShapeError(f"coef must have one channel, got shape {coef.shape}")
    tape = Tape(record=False)
    outs = setup_on_tape(tape, _cast(weights, coef.dtype), tape.constant(coef), level)
    return [o.value for o in outs]


def solve_apply(weights, setup_outs, rhs, level):
    """One application of the solve network to ``rhs``."""
    rhs = T.grid(rhs)
    tape = Tape(record=False)
    nodes = [tape.constant(s) for s in setup_outs]
    return solve_on_tape(tape, _cast(weights, rhs.dtype), nodes, tape.constant(rhs), level).value


class LearnedSolver:
    """The learned ``B`` for one problem: setup runs once, applications reuse it."""

    def __init__(self, weights, spec, level=None):
        self.level = level or level_for_grid(spec.grid_n)
        self.spec = spec
        self.weights = _cast(weights, spec.dtype)
        t0 = time.perf_counter()
        self.setup_outs = setup(self.weights, spec.coef, self.level)
        self.setup_seconds = time.perf_counter() - t0
        self.setup_count = 1
        self.apply_count = 0

    def __call__(self, rhs):
        self.apply_count += 1
        rhs = T.grid(rhs)
        outs = self.setup_outs if rhs.ndim == 4 else [s[0] for s in self.setup_outs]
        return solve_apply(self.weights, outs, rhs, self.level)

    def apply_operator(self, sol):
        return apply_operator(self.spec, sol)


def solver_B(weights, spec, level=None):
    return LearnedSolver(weights, spec, level)
