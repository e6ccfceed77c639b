"""Density estimation on the unit square via histograms and the grid MLE.

Samples are binned on an ``n x n`` grid of half-open cells
``[i/n, (i+1)/n) x [j/n, (j+1)/n)`` (coordinates equal to 1.0 go to the
last cell), the grid estimator is fitted to the counts, and the result is
read as the piecewise-constant density ``n^2 * p[i, j]`` on cell ``(i, j)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import CoordinateOutOfRange, DimensionMismatch, InvalidParameters, QuadratureFailure
from .grid import CountGrid, PmfGrid, hellinger_sq
from .quadrature import integrate_cells, integrate_unit_square
from .solver import FitResult, SolverOptions, fit_mle

MASS_TOL = 1e-6


@dataclass(frozen=True)
class AnalyticDensity:
    """A density on ``[0, 1]^2`` given by a vectorised function.

    ``func`` need not be normalised: its integral is computed once at
    construction (adaptive cubature to 1e-10 absolute) and divided out.
    Pass ``normalized=True`` to assert that ``func`` already integrates to
    one; a deviation above 1e-6 raises :class:`QuadratureFailure`.
    """

    func: Callable
    normalized: bool = False
    dmin: float | None = None
    dmax: float | None = None
    beta: float | None = None
    R: float | None = None
    name: str = "analytic"
    normalizer: float = field(init=False)

    def __post_init__(self):
        z = integrate_unit_square(self.func, atol=1e-10)
        if not z > 0:
            raise QuadratureFailure("density integrates to a nonpositive value")
        if self.normalized and abs(z - 1.0) > MASS_TOL:
            raise QuadratureFailure(f"density integrates to {z!r}, not 1")
        object.__setattr__(self, "normalizer", 1.0 if self.normalized else z)

    def __call__(self, x, y):
        return np.asarray(self.func(x, y), dtype=float) / self.normalizer


@dataclass(frozen=True)
class PiecewiseConstantDensity:
    """Value ``n^2 * cells[i, j]`` on grid cell ``(i, j)``; integrates to one."""

    n: int
    cells: PmfGrid
    fit: FitResult | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        cells = self.cells if isinstance(self.cells, PmfGrid) else PmfGrid(self.cells)
        if cells.shape != (self.n, self.n):
            raise DimensionMismatch(f"cells have shape {cells.shape}, expected {(self.n, self.n)}")
        object.__setattr__(self, "cells", cells)

    @property
    def values(self) -> np.ndarray:
        return self.n**2 * self.cells.mass

    def __call__(self, x, y):
        i = _cell_index(np.asarray(x, dtype=float), self.n)
        j = _cell_index(np.asarray(y, dtype=float), self.n)
        return self.values[i, j]


def _cell_index(x: np.ndarray, n: int) -> np.ndarray:
    if np.any(~((x >= 0.0) & (x <= 1.0))):
        raise CoordinateOutOfRange("coordinates must lie in [0, 1]")
    return np.minimum((x * n).astype(np.int64), n - 1)


def histogram(samples, n: int) -> CountGrid:
    """Counts of ``samples`` (an ``(N, 2)`` array) per cell of the ``n x n`` grid."""
    if n < 1:
        raise InvalidParameters("n must be at least 1")
    pts = np.asarray(samples, dtype=float).reshape(-1, 2)
    i = _cell_index(pts[:, 0], n)
    j = _cell_index(pts[:, 1], n)
    counts = np.bincount(i * n + j, minlength=n * n).reshape(n, n)
    return CountGrid(counts)


def select_grid_size(N: int, beta: float, R: float, dmin: float, delta: float | None = None) -> int:
    """Bias/variance-balancing grid size for a ``beta``-Hölder density.

    ``floor(min((R^2 N / dmin)^(1/(2b+1)), (dmin N / log(dmin N))^(1/2)))``
    with ``b = min(beta, 1)``.  With ``delta`` given, the second term uses
    the high-probability form ``(dmin N / (24 log(dmin N / (12 delta))))^(1/2)``.
    """
    if N < 2 or not beta > 0 or not R > 0 or not dmin > 0 or not dmin * N > math.e:
        raise InvalidParameters("need N >= 2, beta > 0, R > 0, dmin > 0 and dmin*N > e")
    b = min(beta, 1.0)
    smooth = (R * R * N / dmin) ** (1.0 / (2 * b + 1))
    if delta is None:
        shape = math.sqrt(dmin * N / math.log(dmin * N))
    else:
        if not 0 < delta < 1:
            raise InvalidParameters("delta must lie in (0, 1)")
        arg = dmin * N / (12 * delta)
        shape = math.sqrt(dmin * N / (24 * math.log(arg))) if arg > 1 else 0.0
    # absorb pow() rounding such as 1e6 ** (1/3) = 99.99999999999997
    return max(1, int(math.floor(min(smooth, shape) * (1 + 1e-12))))


def fixed_scaling_grid_size(N: int, C: float, beta: float) -> int:
    """``ceil(C N^(1/(2 beta + 1)))``."""
    if N < 1 or not C > 0 or not beta > 0:
        raise InvalidParameters("need N >= 1, C > 0 and beta > 0")
    return max(1, int(math.ceil(C * N ** (1.0 / (2 * beta + 1)) * (1 - 1e-12))))


def scaling_constant(beta: float, N_ref: float = 1e8, n_ref: int = 200) -> float:
    """The ``C`` for which :func:`fixed_scaling_grid_size` maps ``N_ref`` to ``n_ref``."""
    return n_ref / N_ref ** (1.0 / (2 * beta + 1))


def fit_density(samples, n: int, opts: SolverOptions = SolverOptions()) -> PiecewiseConstantDensity:
    Y = histogram(samples, n)
    res = fit_mle(Y, opts)
    return PiecewiseConstantDensity(n, res.p_hat, res)


def empirical_density(samples, n: int) -> PiecewiseConstantDensity:
    Y = histogram(samples, n)
    return PiecewiseConstantDensity(n, PmfGrid(Y.counts / Y.total))


def cell_average_density(rho, n: int, quad_tol: float = 1e-10) -> PiecewiseConstantDensity:
    """Cell masses ``∫_{cell} rho`` as a piecewise-constant density."""
    if not quad_tol > 0:
        raise InvalidParameters("quad_tol must be positive")
    masses = integrate_cells(lambda x, y, _c: rho(x, y), n, quad_tol)
    total = masses.sum()
    if abs(total - 1.0) > MASS_TOL:
        raise QuadratureFailure(f"cell masses sum to {total!r}")
    if np.any(masses < 0):
        raise QuadratureFailure("negative cell mass")
    return PiecewiseConstantDensity(n, PmfGrid(masses / total))


def hellinger_sq_pc(f: PiecewiseConstantDensity, g: PiecewiseConstantDensity) -> float:
    """Exact squared Hellinger distance between two densities on the same grid."""
    if f.n != g.n:
        raise DimensionMismatch(f"grids differ: n={f.n} vs n={g.n}")
    return hellinger_sq(f.cells, g.cells)


def hellinger_sq_continuous(f: PiecewiseConstantDensity, rho, quad_tol: float = 1e-7) -> float:
    """``∫ (sqrt(f) - sqrt(rho))^2`` over the unit square, cell by cell."""
    if not quad_tol > 0:
        raise InvalidParameters("quad_tol must be positive")
    roots = np.sqrt(f.values).ravel()

    def integrand(x, y, cell):
        return (roots[cell][:, None] - np.sqrt(rho(x, y))) ** 2

    return float(integrate_cells(integrand, f.n, quad_tol).sum())
