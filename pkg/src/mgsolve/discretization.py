"""Upwind discretization of the non-divergence convection-diffusion equation.

The grid holds interior points only; the zero Dirichlet boundary enters
through zero padding. Rows are the first spatial axis (y), columns the
second (x). With the ``1/h`` factor removed the operator reads

    A sol = coef * (laplacian * sol) + (upwind * sol)

where ``*`` between a stencil and a grid is a size-preserving correlation and
``coef = 1 / Re`` is the per-point inverse mesh Reynolds number.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T

LAPLACIAN = np.array([[0, -1, 0], [-1, 4, -1], [0, -1, 0]], dtype=float)

DX_PLUS = np.array([[0, 0, 0], [0, -1, 1], [0, 0, 0]], dtype=float)
DX_MINUS = np.array([[0, 0, 0], [-1, 1, 0], [0, 0, 0]], dtype=float)
DY_PLUS = np.array([[0, 1, 0], [0, -1, 0], [0, 0, 0]], dtype=float)
DY_MINUS = np.array([[0, 0, 0], [0, 1, 0], [0, -1, 0]], dtype=float)

DEFAULT_VELOCITY = (math.sin(0.5), math.cos(0.5))


@dataclass(frozen=True)
class UpwindStencil:
    laplacian: np.ndarray
    upwind: np.ndarray


def _check_velocity(velocity):
    vx, vy = (float(v) for v in velocity)
    if not math.isclose(math.hypot(vx, vy), 1.0, rel_tol=0, abs_tol=1e-12):
        raise ValueError(f"velocity must have unit length, got ({vx}, {vy})")
    return vx, vy


def build_upwind_stencil(velocity):
    """First-order upwind stencils for a unit velocity ``(v_x, v_y)``."""
    vx, vy = _check_velocity(velocity)
    upwind = (max(vx, 0.0) * DX_MINUS + min(vx, 0.0) * DX_PLUS
              + max(vy, 0.0) * DY_MINUS + min(vy, 0.0) * DY_PLUS)
    return UpwindStencil(LAPLACIAN.copy(), upwind)


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Everything that determines the linear operator on one grid."""

    grid_n: int
    coef: np.ndarray
    velocity: tuple = DEFAULT_VELOCITY
    re_limit: float = 1000.0

    def __post_init__(self):
        n = int(self.grid_n)
        if n < 1 or (n + 1) & n:
            raise ValueError(f"grid_n must be 2**k - 1, got {self.grid_n}")
        if self.re_limit <= 1:
            raise ValueError(f"re_limit must exceed 1, got {self.re_limit}")
        _check_velocity(self.velocity)
        coef = T.grid(self.coef)
        if coef.ndim == 3:
            coef = coef[None]
        if coef.shape[1:] != (1, n, n):
            raise T.ShapeError(f"coef must be (1, {n}, {n}) per sample, got {coef.shape}")
        lo = 1.0 / self.re_limit
        tol = 16 * np.finfo(coef.dtype).eps
        if coef.min() < lo * (1 - tol) or coef.max() > 1 + tol:
            raise ValueError(f"coef entries must lie in [{lo:g}, 1]")
        # stored batched; a single problem is a batch of one
        object.__setattr__(self, "coef", coef)
        object.__setattr__(self, "velocity", tuple(float(v) for v in self.velocity))
        object.__setattr__(self, "grid_n", n)

    @property
    def dtype(self):
        return self.coef.dtype

    @property
    def batch(self):
        return self.coef.shape[0]

    @property
    def stencil(self):
        return build_upwind_stencil(self.velocity)

    def kernels(self, dtype=None):
        """Laplacian and upwind stencils as (1, 1, 3, 3) kernels."""
        dt = dtype or self.dtype
        s = self.stencil
        return (s.laplacian.reshape(1, 1, 3, 3).astype(dt),
                s.upwind.reshape(1, 1, 3, 3).astype(dt))

    def diagonal(self):
        """Diagonal of A, ``4 coef + |v_x| + |v_y|``."""
        vx, vy = self.velocity
        return 4 * self.coef + self.coef.dtype.type(abs(vx) + abs(vy))

    def astype(self, precision):
        dt = T.dtype_for(precision)
        return ProblemSpec(self.grid_n, self.coef.astype(dt), self.velocity, self.re_limit)


def _match(spec, sol):
    sol = T.grid(sol)
    if sol.dtype != spec.dtype:
        raise T.PrecisionError(f"sol is {sol.dtype}, operator is {spec.dtype}")
    s4 = sol if sol.ndim == 4 else sol[None]
    if s4.shape[1:] != (1, spec.grid_n, spec.grid_n) or s4.shape[0] != spec.batch:
        raise T.ShapeError(f"sol shape {sol.shape} does not fit operator "
                           f"(batch {spec.batch}, grid {spec.grid_n})")
    return s4, sol.ndim == 3


def apply_operator(spec, sol):
    """Return ``A sol`` for the problem(s) in ``spec``."""
    s4, squeeze = _match(spec, sol)
    lap, up = spec.kernels()
    out = spec.coef * T.conv2d(s4, lap) + T.conv2d(s4, up)
    return out[0] if squeeze else out


def residual(spec, sol, rhs):
    """``rhs - A sol``."""
    rhs = T.grid(rhs)
    out = apply_operator(spec, sol)
    if rhs.shape != out.shape:
        raise T.ShapeError(f"rhs shape {rhs.shape} != solution shape {out.shape}")
    return rhs - out


def operator_on_tape(tape, spec, sol_node):
    """``A sol`` recorded on an autodiff tape (stencils and coef are constants)."""
    lap, up = spec.kernels()
    coef = tape.constant(spec.coef)
    return tape.add(tape.mul(coef, tape.conv2d(sol_node, lap)), tape.conv2d(sol_node, up))


def coef_from_random(random, re_limit):
    """Map values in [0, 1] to coefficients ``10 ** -(random * log10(re_limit))``."""
    if re_limit <= 1:
        raise ValueError(f"re_limit must exceed 1, got {re_limit}")
    r = np.asarray(random)
    if r.dtype.type not in T.DTYPES:
        r = r.astype(np.float64)
    if r.size and (np.nanmin(r) < 0 or np.nanmax(r) > 1 or not np.all(np.isfinite(r))):
        raise ValueError("random tensor entries must lie in [0, 1]")
    power = r * r.dtype.type(math.log10(re_limit))
    coef = np.power(r.dtype.type(10), -power)
    # pin the endpoints against rounding so ProblemSpec range checks hold
    return np.clip(coef, r.dtype.type(1 / re_limit), r.dtype.type(1))
