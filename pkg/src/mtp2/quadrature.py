"""Vectorised adaptive cubature on axis-aligned squares.

Every region is integrated with the tensor product of the 15-point
Gauss-Kronrod rule; the embedded 7-point Gauss tensor rule gives the error
estimate.  Regions whose estimate exceeds their share of the tolerance are
split into four and re-queued.  All regions at one refinement level are
evaluated in a single vectorised call of the integrand.
"""

from __future__ import annotations

import numpy as np

from .errors import QuadratureFailure

# QUADPACK qk15 abscissae (descending, last is the centre) and weights
_XGK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
])

# full 15-point rule on [-1, 1]
NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
KRONROD = np.concatenate([_WGK[:-1], _WGK[::-1]])
GAUSS = np.zeros(15)
# Gauss nodes are the odd-indexed Kronrod abscissae (1, 3, 5, centre)
for _k, _w in zip((1, 3, 5), _WG[:3]):
    GAUSS[_k] = _w
    GAUSS[14 - _k] = _w
GAUSS[7] = _WG[3]

_W2K = np.outer(KRONROD, KRONROD).ravel()
_W2G = np.outer(GAUSS, GAUSS).ravel()
_U = np.repeat(NODES, 15)
_V = np.tile(NODES, 15)


def integrate_squares(f, x0, y0, h, tags, tol, max_depth: int = 12):
    """Integrate ``f`` over squares ``[x0, x0+h) x [y0, y0+h)``.

    ``f(x, y, tags)`` receives node arrays of shape ``(k, 225)`` and the
    per-region ``tags`` of shape ``(k,)`` and returns values shaped like
    ``x``.  The result is the per-tag sum of region integrals (``tags``
    must be ``0..m-1``) with total error estimate at most ``sum(tol)``.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    y0 = np.asarray(y0, dtype=float).ravel()
    h = np.broadcast_to(np.asarray(h, dtype=float), x0.shape).copy()
    tags = np.asarray(tags, dtype=np.int64).ravel()
    tol = np.broadcast_to(np.asarray(tol, dtype=float), x0.shape).copy()
    m = int(tags.max()) + 1 if tags.size else 0
    total = np.zeros(m)
    err_total = np.zeros(m)
    for _ in range(max_depth + 1):
        if x0.size == 0:
            return total, err_total
        half = 0.5 * h
        cx, cy = x0 + half, y0 + half
        X = cx[:, None] + half[:, None] * _U[None, :]
        Y = cy[:, None] + half[:, None] * _V[None, :]
        vals = np.asarray(f(X, Y, tags), dtype=float)
        area = half * half
        K = area * (vals @ _W2K)
        G = area * (vals @ _W2G)
        err = np.abs(K - G)
        ok = err <= tol
        np.add.at(total, tags[ok], K[ok])
        np.add.at(err_total, tags[ok], err[ok])
        bad = ~ok
        if not np.any(bad):
            return total, err_total
        x0, y0, hb, tags, tb = x0[bad], y0[bad], half[bad], tags[bad], tol[bad] / 4.0
        x0 = np.concatenate([x0, x0 + hb, x0, x0 + hb])
        y0 = np.concatenate([y0, y0, y0 + hb, y0 + hb])
        h = np.tile(hb, 4)
        tags = np.tile(tags, 4)
        tol = np.tile(tb, 4)
    raise QuadratureFailure(f"{x0.size} region(s) did not reach tolerance within {max_depth} refinements")


def integrate_cells(f, n: int, atol: float, max_depth: int = 12) -> np.ndarray:
    """Integrals of ``f(x, y, cell)`` over each cell of the ``n x n`` grid.

    Returns an ``(n, n)`` array indexed ``[i, j]`` for the cell
    ``[i/n, (i+1)/n) x [j/n, (j+1)/n)``; the total error estimate is at most
    ``atol``.
    """
    i, j = np.divmod(np.arange(n * n), n)
    vals, _ = integrate_squares(f, i / n, j / n, 1.0 / n, np.arange(n * n), atol / (n * n), max_depth)
    return vals.reshape(n, n)


def integrate_unit_square(f, atol: float, max_depth: int = 14) -> float:
    """``∫∫_{[0,1]^2} f(x, y)`` for a vectorised ``f(x, y)``."""
    vals, _ = integrate_squares(lambda x, y, _t: f(x, y), [0.0], [0.0], 1.0, [0], atol, max_depth)
    return float(vals[0])
