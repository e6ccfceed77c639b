"""Grid data types, total-positivity checks and distances between PMFs.

All grids are dense ``float64``/``int64`` arrays in row-major order.  The
dataclasses below validate their contents once and then freeze the
underlying buffer, so instances can be shared freely between threads.
Every operation also accepts plain array-likes (the types implement
``__array__``).

Only adjacent 2x2 minors are checked.  For a strictly positive grid,
nonnegativity of all adjacent minors implies nonnegativity of every minor
``p[i,j] p[k,l] - p[i,l] p[k,j]`` with ``i < k, j < l`` (sum the adjacent
log-second-differences over the rectangle).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, NonPositiveEntry, SupportViolation

SUM_TOL = 1e-8


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def _grid2d(a, dtype=float) -> np.ndarray:
    a = np.asarray(a, dtype=dtype)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise DimensionMismatch(f"expected a non-empty 2-D grid, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class CountGrid:
    """Observation counts ``Y`` on an ``n1 x n2`` grid."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.dtype.kind == "f":
            if not np.all(np.isfinite(c)) or np.any(c != np.round(c)):
                raise ValueError("counts must be integers")
        c = _grid2d(c, dtype=np.int64)
        if np.any(c < 0):
            raise ValueError("counts must be nonnegative")
        object.__setattr__(self, "counts", _frozen(c))

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __array__(self, dtype=None, copy=None):
        return self.counts if dtype is None else self.counts.astype(dtype)


@dataclass(frozen=True)
class PmfGrid:
    """Probability mass function on a grid (nonnegative, sums to one)."""

    mass: np.ndarray

    def __post_init__(self):
        m = _grid2d(self.mass)
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise ValueError("PMF entries must be finite and nonnegative")
        if abs(m.sum() - 1.0) > SUM_TOL:
            raise ValueError(f"PMF sums to {m.sum()!r}, not 1")
        object.__setattr__(self, "mass", _frozen(m))

    @property
    def shape(self) -> tuple[int, int]:
        return self.mass.shape

    def __array__(self, dtype=None, copy=None):
        return self.mass if dtype is None else self.mass.astype(dtype)


@dataclass(frozen=True)
class LogPmfGrid:
    """Log-mass ``theta`` on a grid.

    ``normalized=True`` asserts ``sum(exp(theta)) == 1`` within 1e-8.
    Entries may be ``-inf`` (zero mass) but never ``+inf`` or NaN.
    """

    theta: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        t = _grid2d(self.theta)
        if np.any(np.isnan(t)) or np.any(t == np.inf):
            raise ValueError("theta must not contain NaN or +inf")
        if self.normalized and abs(np.exp(t).sum() - 1.0) > SUM_TOL:
            raise ValueError("theta flagged normalized but sum(exp(theta)) != 1")
        object.__setattr__(self, "theta", _frozen(t))

    @property
    def shape(self) -> tuple[int, int]:
        return self.theta.shape

    def to_pmf(self) -> PmfGrid:
        return PmfGrid(np.exp(self.theta))

    def __array__(self, dtype=None, copy=None):
        return self.theta if dtype is None else self.theta.astype(dtype)


@dataclass(frozen=True)
class MinorReport:
    """Result of a supermodularity / MTP2 check.

    ``argmin`` is the 0-based top-left index of the worst 2x2 window, or
    ``None`` for grids with a single row or column (vacuously feasible).
    """

    min_minor: float
    argmin: tuple[int, int] | None
    feasible: bool
    tol: float = field(default=0.0)


def second_differences(theta) -> np.ndarray:
    """Adjacent second differences ``t[i,j] + t[i+1,j+1] - t[i,j+1] - t[i+1,j]``."""
    t = _grid2d(theta)
    return t[:-1, :-1] + t[1:, 1:] - t[:-1, 1:] - t[1:, :-1]


def _report(minors: np.ndarray, tol: float) -> MinorReport:
    if minors.size == 0:
        return MinorReport(np.inf, None, True, tol)
    k = int(np.argmin(minors))
    i, j = np.unravel_index(k, minors.shape)
    m = float(minors[i, j])
    return MinorReport(m, (int(i), int(j)), bool(m >= -tol), tol)


def is_supermodular(theta, tol: float = 0.0) -> MinorReport:
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    return _report(second_differences(theta), tol)


def is_mtp2(p, tol: float = 0.0) -> MinorReport:
    """Check the adjacent 2x2 minors of a strictly positive PMF.

    Works on the products directly (not on ``log p``) so tiny masses do not
    lose precision; the reported ``min_minor`` is in mass-squared units.
    """
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    m = _grid2d(p)
    if np.any(~(m > 0)):
        raise NonPositiveEntry("is_mtp2 requires strictly positive entries")
    minors = m[:-1, :-1] * m[1:, 1:] - m[:-1, 1:] * m[1:, :-1]
    return _report(minors, tol)


def feasibility_gap(theta) -> float:
    """``max(0, -min second difference)``; zero iff ``theta`` is supermodular."""
    d = second_differences(theta)
    if d.size == 0:
        return 0.0
    return float(max(0.0, -d.min()))


def _pair(p, q) -> tuple[np.ndarray, np.ndarray]:
    a, b = _grid2d(p), _grid2d(q)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes {a.shape} and {b.shape} differ")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("entries must be nonnegative")
    return a, b


def hellinger_sq(p, q) -> float:
    """Squared Hellinger distance ``sum (sqrt p - sqrt q)^2`` (range [0, 2])."""
    a, b = _pair(p, q)
    return float(np.sum((np.sqrt(a) - np.sqrt(b)) ** 2))


def kl(p, q) -> float:
    """Kullback-Leibler divergence ``sum p log(p/q)`` with ``0 log 0 = 0``."""
    a, b = _pair(p, q)
    supp = a > 0
    if np.any(b[supp] == 0):
        raise SupportViolation("q vanishes where p has mass")
    return float(np.sum(a[supp] * (np.log(a[supp]) - np.log(b[supp]))))


def corner_ratio_log(p) -> float:
    """``log(p[0,0] p[-1,-1] / (p[-1,0] p[0,-1]))``."""
    m = _grid2d(p)
    corners = np.array([m[0, 0], m[-1, -1], m[-1, 0], m[0, -1]])
    if np.any(~(corners > 0)):
        raise NonPositiveEntry("corner entries must be strictly positive")
    lc = np.log(corners)
    return float(lc[0] + lc[1] - lc[2] - lc[3])


def logsumexp(theta) -> float:
    t = np.asarray(theta, dtype=float)
    m = np.max(t)
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.sum(np.exp(t - m))))


def normalize_log(theta_tilde) -> LogPmfGrid:
    """Subtract ``log sum exp(theta)`` so that the result is a log-PMF."""
    t = _grid2d(theta_tilde)
    if not np.all(np.isfinite(t)):
        raise ValueError("normalize_log requires finite entries")
    return LogPmfGrid(t - logsumexp(t), normalized=True)


def empirical_pmf(Y) -> PmfGrid:
    c = _grid2d(np.asarray(Y), dtype=np.int64)
    total = int(c.sum())
    if total < 1:
        raise ValueError("empirical_pmf needs at least one observation")
    return PmfGrid(c / total)


# --- serialization --------------------------------------------------------


def write_grid_csv(path, grid, fmt: str = "%.17g") -> None:
    a = _grid2d(np.asarray(grid))
    if a.dtype.kind in "iu":
        fmt = "%d"
    np.savetxt(path, a, fmt=fmt, delimiter=",")


def read_grid_csv(path, shape: tuple[int, int] | None = None) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(v) for v in line.split(",")])
    if not rows:
        raise DimensionMismatch(f"{path}: empty grid")
    width = {len(r) for r in rows}
    if len(width) != 1:
        raise DimensionMismatch(f"{path}: ragged rows (lengths {sorted(width)})")
    a = np.array(rows, dtype=float)
    if shape is not None and a.shape != tuple(shape):
        raise DimensionMismatch(f"{path}: expected shape {tuple(shape)}, got {a.shape}")
    return a


def grid_to_json(grid) -> dict:
    a = _grid2d(np.asarray(grid))
    data = a.ravel().tolist()
    return {"n1": a.shape[0], "n2": a.shape[1], "data": data}


def grid_from_json(obj) -> np.ndarray:
    if isinstance(obj, (str, bytes)):
        obj = json.loads(obj)
    try:
        n1, n2, data = int(obj["n1"]), int(obj["n2"]), obj["data"]
    except (KeyError, TypeError) as exc:
        raise DimensionMismatch(f"malformed grid envelope: {exc}") from None
    if n1 < 1 or n2 < 1 or len(data) != n1 * n2:
        raise DimensionMismatch(f"envelope says {n1}x{n2} but holds {len(data)} values")
    return np.asarray(data, dtype=float).reshape(n1, n2)


def read_grid(path) -> np.ndarray:
    """Read a grid from ``.json`` (envelope) or anything else as CSV."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        return grid_from_json(json.loads(path.read_text()))
    return read_grid_csv(path)
