"""Geometric multigrid baseline and the stationary iteration driver.

The GMG V-cycle uses weighted Jacobi smoothing, bilinear prolongation,
full-weighting restriction ``R = P^T / 4`` and coarse operators obtained by
re-discretizing the PDE on the coarse grid.

Operators are stored with the ``1/h`` factor removed and ``coef = mu / h``.
Re-discretizing the same ``mu`` on a grid of spacing ``2h`` therefore halves
the injected coefficient, and the restricted residual picks up the factor
``2h / h = 2``.
"""
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .discretization import ProblemSpec, apply_operator

# bilinear prolongation stencil on nested 2**k - 1 grids
_BILINEAR = np.array([[0.25, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 0.25]])

DEFAULT_WEIGHT = 0.67
DEFAULT_SWEEPS = 3
DIVERGENCE_LIMIT = 1e6
COARSEN = 2  # mesh spacing ratio between consecutive levels


def _halvings(n):
    count = 0
    while n >= 3 and n % 2 == 1:
        n = (n - 1) // 2
        count += 1
    return count


def gmg_levels_for_grid(grid_n):
    """Levels so that the coarsest grid is 15x15 (31 -> 2, 63 -> 3, ...)."""
    k = int(round(math.log2(grid_n + 1)))
    if 2 ** k - 1 != grid_n:
        raise ValueError(f"grid size must be 2**k - 1, got {grid_n}")
    return max(1, k - 3)


@dataclass(eq=False)
class GmgHierarchy:
    specs: list
    jacobi_weight: float = DEFAULT_WEIGHT
    sweeps: int = DEFAULT_SWEEPS

    def __post_init__(self):
        if not 0 < self.jacobi_weight <= 1:
            raise ValueError(f"jacobi_weight must lie in (0, 1], got {self.jacobi_weight}")
        if self.sweeps < 1:
            raise ValueError("sweeps must be positive")
        for fine, coarse in zip(self.specs, self.specs[1:]):
            if coarse.grid_n != (fine.grid_n - 1) // 2:
                raise ValueError("hierarchy grid sizes must halve exactly")

    @property
    def levels(self):
        return len(self.specs)


def gmg_setup(fine_spec, levels, jacobi_weight=DEFAULT_WEIGHT, sweeps=DEFAULT_SWEEPS):
    """Build the level hierarchy.

    Coarse point ``(i, j)`` takes the fine coefficient at ``(2i+1, 2j+1)``,
    halved because the mesh spacing doubles; the mesh Reynolds range limit
    doubles with it.
    """
    if levels < 1:
        raise ValueError("levels must be positive")
    if _halvings(fine_spec.grid_n) < levels - 1:
        raise ValueError(f"grid {fine_spec.grid_n} cannot be halved {levels - 1} times")
    specs = [fine_spec]
    for _ in range(levels - 1):
        f = specs[-1]
        coarse = np.ascontiguousarray(f.coef[..., 1::2, 1::2]) / f.dtype.type(COARSEN)
        specs.append(ProblemSpec((f.grid_n - 1) // 2, coarse, f.velocity, COARSEN * f.re_limit))
    return GmgHierarchy(specs, jacobi_weight, sweeps)


def weighted_jacobi(spec, sol, rhs, weight=DEFAULT_WEIGHT, sweeps=DEFAULT_SWEEPS):
    """``sweeps`` updates of ``sol += weight * (rhs - A sol) / diag(A)``."""
    sol = T.grid(sol)
    inv_diag = spec.dtype.type(weight) / spec.diagonal()
    if sol.ndim == 3:
        inv_diag = inv_diag[0]
    for _ in range(sweeps):
        sol = sol + inv_diag * (rhs - apply_operator(spec, sol))
    return sol


def _as_kernel(dtype, factor=1.0):
    return (factor * _BILINEAR).reshape(1, 1, 3, 3).astype(dtype)


def bilinear_prolong(coarse):
    """Bilinear interpolation from an ``M`` grid to its ``2M + 1`` parent."""
    coarse = T.grid(coarse)
    if coarse.shape[-3] != 1:
        raise T.ShapeError("transfer operators act on single-channel grids")
    return T.transposed_conv2d(coarse, _as_kernel(coarse.dtype))


def bilinear_restrict(fine):
    """Full-weighting restriction, the transpose of prolongation over four."""
    fine = T.grid(fine)
    if fine.shape[-3] != 1:
        raise T.ShapeError("transfer operators act on single-channel grids")
    n = fine.shape[-1]
    if n % 2 == 0 or n < 3 or fine.shape[-2] % 2 == 0:
        raise T.ShapeError(f"restriction needs odd grid sizes >= 3, got {fine.shape[-2:]}")
    return T.conv2d(fine, _as_kernel(fine.dtype, 0.25), stride=2)


def v_cycle(h, level_index, rhs):
    """Approximate ``A_l^{-1} rhs`` with one V-cycle from a zero initial guess."""
    if not 0 <= level_index < h.levels:
        raise IndexError(f"level_index {level_index} outside [0, {h.levels})")
    spec = h.specs[level_index]
    rhs = T.grid(rhs)
    e = np.zeros_like(rhs)
    if level_index == h.levels - 1:
        # coarsest level: extra smoothing stands in for a direct solve
        return weighted_jacobi(spec, e, rhs, h.jacobi_weight, 2 * h.sweeps)
    e = weighted_jacobi(spec, e, rhs, h.jacobi_weight, h.sweeps)
    r = rhs - apply_operator(spec, e)
    rc = bilinear_restrict(r) * r.dtype.type(COARSEN)
    ec = v_cycle(h, level_index + 1, rc)
    e = e + bilinear_prolong(ec)
    return weighted_jacobi(spec, e, rhs, h.jacobi_weight, h.sweeps)


@dataclass
class IterationReport:
    iterations: int = 0
    relative_residual_history: list = field(default_factory=list)
    converged: bool = False
    diverged: bool = False
    setup_seconds: float = 0.0
    solve_seconds: float = 0.0

    @property
    def final_relative_residual(self):
        return self.relative_residual_history[-1]


def stationary_solve(apply_a, apply_b, rhs, tol, max_iters=500):
    """Iterate ``sol <- sol + B (rhs - A sol)`` from ``sol = 0``.

    Stops when the relative residual ``||rhs - A sol|| / ||rhs||`` is at most
    ``tol``, after ``max_iters`` iterations, or when it exceeds
    :data:`DIVERGENCE_LIMIT` or turns non-finite (``report.diverged``).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    t0 = time.perf_counter()
    rhs = T.grid(rhs)
    sol = np.zeros_like(rhs)
    rnorm0 = T.norm2(rhs)
    report = IterationReport()
    if rnorm0 == 0:
        report.relative_residual_history = [0.0]
        report.converged = True
        return sol, report
    r = rhs
    history = [1.0]
    while history[-1] > tol and len(history) <= max_iters:
        sol = sol + apply_b(r)
        r = rhs - apply_a(sol)
        rel = T.norm2(r) / rnorm0
        history.append(rel)
        if not math.isfinite(rel) or rel > DIVERGENCE_LIMIT:
            report.diverged = True
            break
    report.relative_residual_history = history
    report.iterations = len(history) - 1
    report.converged = history[-1] <= tol
    report.solve_seconds = time.perf_counter() - t0
    return sol, report


def gmg_solve(spec, rhs, tol, levels=None, max_iters=500,
              weight=DEFAULT_WEIGHT, sweeps=DEFAULT_SWEEPS):
    """Stationary iteration with one GMG V-cycle as ``B``."""
    t0 = time.perf_counter()
    h = gmg_setup(spec, levels or gmg_levels_for_grid(spec.grid_n), weight, sweeps)
    setup = time.perf_counter() - t0
    sol, report = stationary_solve(lambda s: apply_operator(spec, s),
                                   lambda r: v_cycle(h, 0, r), rhs, tol, max_iters)
    report.setup_seconds = setup
    return sol, report
