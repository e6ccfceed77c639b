"""Weighted projection onto supermodular grids intersected with a box.

The feasible set is ``{theta : every adjacent second difference >= 0}``
optionally intersected with ``lower <= theta <= upper``.  Distances are
measured in the weighted Frobenius norm ``||x||_w^2 = sum w * x**2``.

:func:`dykstra_project` runs cyclic Dykstra sweeps: the box first (with a
signed residual grid), then every 2x2 cell half-space in row-major order,
each with a scalar nonnegative residual.  Each sub-projection has a closed
form, so one sweep costs ``O(n1 n2)``.  The sweep loop is compiled with
numba; :func:`project_cell` and :func:`project_box` are the same updates
in plain numpy for inspection and testing.

:func:`oracle_project` solves the same problem with a dense primal
active-set QP method and serves as an independent check on small grids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DimensionMismatch, InvalidParameters, SizeLimit


@dataclass(frozen=True)
class BoxBounds:
    """Entrywise bounds; ``-inf``/``+inf`` entries are inactive."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 2:
            raise DimensionMismatch("lower and upper must be 2-D grids of equal shape")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)) or np.any(lo > hi):
            raise InvalidParameters("bounds must satisfy lower <= upper entrywise")
        lo, hi = lo.copy(), hi.copy()
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def shape(self):
        return self.lower.shape

    @classmethod
    def constant(cls, shape, lower=-np.inf, upper=np.inf) -> "BoxBounds":
        return cls(np.full(shape, lower, dtype=float), np.full(shape, upper, dtype=float))


@dataclass(frozen=True)
class ProjectionOptions:
    """Stopping rule for :func:`dykstra_project`.

    A run stops once a sweep moves the iterate by less than ``rel_tol``
    (relative, counting every sub-projection move, not only the net change)
    *and* the worst constraint violation is at most ``feas_tol``, or after
    ``max_sweeps`` sweeps.
    """

    rel_tol: float = 1e-6
    max_sweeps: int = 400_000
    include_box: bool = True
    feas_tol: float = 1e-6

    def __post_init__(self):
        if not self.rel_tol > 0 or self.max_sweeps < 1 or self.feas_tol < 0:
            raise InvalidParameters("need rel_tol > 0, feas_tol >= 0 and max_sweeps >= 1")


@dataclass
class DykstraState:
    """Iterate and Dykstra residuals after a projection run.

    ``eta`` holds one nonnegative residual per 2x2 cell, ``eta_box`` the
    signed residual of the box projection (zeros when no box was used).
    """

    theta: np.ndarray
    eta: np.ndarray
    eta_box: np.ndarray
    gamma: np.ndarray
    sweeps: int = 0
    rel_change: float = np.inf
    feasibility_gap: float = np.inf
    converged: bool = False

    def duals(self, weights):
        """Multipliers in weight-free units, for warm-starting a related projection."""
        return self.eta.copy(), np.asarray(weights, dtype=float) * self.eta_box

    def diagnostics(self) -> dict:
        return {
            "sweeps": int(self.sweeps),
            "feasibility_gap": float(self.feasibility_gap),
            "rel_change": float(self.rel_change),
            "converged": bool(self.converged),
        }


def harmonic_weights(weights) -> np.ndarray:
    """``Gamma[i,j] = 1 / sum(1/w)`` over the 2x2 window at ``(i, j)``."""
    w = np.asarray(weights, dtype=float)
    if np.any(~(w > 0)):
        raise InvalidParameters("weights must be strictly positive")
    inv = 1.0 / w
    return 1.0 / (inv[:-1, :-1] + inv[:-1, 1:] + inv[1:, :-1] + inv[1:, 1:])


_SIGNS = np.array([[1.0, -1.0], [-1.0, 1.0]])


def project_cell(Z, weights, gamma, cell, eta_in: float = 0.0):
    """One Dykstra update for the half-space of the 2x2 window at ``cell``.

    Returns ``(Z_new, eta_out)``; only the four window entries change.
    """
    if eta_in < 0:
        raise InvalidParameters("cell residual must be nonnegative")
    i, j = cell
    Z = np.array(Z, dtype=float, copy=True)
    w = np.asarray(weights, dtype=float)
    window = Z[i : i + 2, j : j + 2]
    d = float(np.sum(_SIGNS * window))
    eta_out = max(eta_in - float(gamma[i, j]) * d, 0.0)
    Z[i : i + 2, j : j + 2] += _SIGNS / w[i : i + 2, j : j + 2] * (eta_out - eta_in)
    return Z, eta_out


def project_box(Z, bounds: BoxBounds) -> np.ndarray:
    return np.clip(np.asarray(Z, dtype=float), bounds.lower, bounds.upper)


@njit(cache=True, nogil=True)
def _sweeps(theta, eta, eta_box, inv_w, gamma, lower, upper, has_box, reverse,
            rel_tol, feas_tol, max_sweeps):
    n1, n2 = theta.shape
    prev = theta.copy()
    rel = np.inf
    gap = np.inf
    done = 0
    for s in range(max_sweeps):
        # squared length of every sub-projection move in this sweep
        path = 0.0
        if has_box:
            for i in range(n1):
                for j in range(n2):
                    z = theta[i, j] + eta_box[i, j]
                    t = z
                    if t < lower[i, j]:
                        t = lower[i, j]
                    elif t > upper[i, j]:
                        t = upper[i, j]
                    eta_box[i, j] = z - t
                    path += (t - theta[i, j]) ** 2
                    theta[i, j] = t
        for a in range(n1 - 1):
            i = n1 - 2 - a if reverse else a
            for b in range(n2 - 1):
                j = n2 - 2 - b if reverse else b
                d = theta[i, j] - theta[i, j + 1] - theta[i + 1, j] + theta[i + 1, j + 1]
                e_old = eta[i, j]
                e_new = e_old - gamma[i, j] * d
                if e_new < 0.0:
                    e_new = 0.0
                step = e_new - e_old
                if step != 0.0:
                    theta[i, j] += inv_w[i, j] * step
                    theta[i, j + 1] -= inv_w[i, j + 1] * step
                    theta[i + 1, j] -= inv_w[i + 1, j] * step
                    theta[i + 1, j + 1] += inv_w[i + 1, j + 1] * step
                    path += step * step * (inv_w[i, j] ** 2 + inv_w[i, j + 1] ** 2
                                           + inv_w[i + 1, j] ** 2 + inv_w[i + 1, j + 1] ** 2)
                eta[i, j] = e_new
        done = s + 1
        num = 0.0
        den = 0.0
        for i in range(n1):
            for j in range(n2):
                diff = theta[i, j] - prev[i, j]
                num += diff * diff
                den += prev[i, j] * prev[i, j]
                prev[i, j] = theta[i, j]
        den = max(np.sqrt(den), 1e-12)
        rel = max(np.sqrt(num), np.sqrt(path)) / den
        if rel < rel_tol:
            gap = _violation(theta, lower, upper, has_box)
            if gap <= feas_tol:
                break
    gap = _violation(theta, lower, upper, has_box)
    return done, rel, gap


@njit(cache=True, nogil=True)
def _violation(theta, lower, upper, has_box):
    n1, n2 = theta.shape
    worst = 0.0
    for i in range(n1 - 1):
        for j in range(n2 - 1):
            d = theta[i, j] - theta[i, j + 1] - theta[i + 1, j] + theta[i + 1, j + 1]
            if -d > worst:
                worst = -d
    if has_box:
        for i in range(n1):
            for j in range(n2):
                if lower[i, j] - theta[i, j] > worst:
                    worst = lower[i, j] - theta[i, j]
                if theta[i, j] - upper[i, j] > worst:
                    worst = theta[i, j] - upper[i, j]
    return worst


def _check_inputs(y, weights, bounds):
    y = np.asarray(y, dtype=float)
    w = np.asarray(weights, dtype=float)
    if y.ndim != 2 or w.shape != y.shape:
        raise DimensionMismatch(f"target {y.shape} and weights {w.shape} must be equal 2-D shapes")
    if np.any(~(w > 0)) or not np.all(np.isfinite(w)):
        raise InvalidParameters("weights must be finite and strictly positive")
    if not np.all(np.isfinite(y)):
        raise InvalidParameters("target must be finite")
    if bounds is not None and bounds.shape != y.shape:
        raise DimensionMismatch("bounds shape differs from target")
    return y, w


def init_state(y, weights, duals=None) -> DykstraState:
    """Fresh Dykstra state for target ``y``.

    ``duals=(cell_multipliers, box_multipliers)`` (see
    :meth:`DykstraState.duals`) starts from previously found multipliers
    instead of zero; the iterate is set consistently so the run still
    converges to the projection of ``y``.
    """
    y, w = _check_inputs(y, weights, None)
    n1, n2 = y.shape
    eta = np.zeros((max(n1 - 1, 0), max(n2 - 1, 0)))
    eta_box = np.zeros_like(y)
    theta = y.copy()
    if duals is not None:
        cell, box = duals
        eta = np.maximum(np.asarray(cell, dtype=float), 0.0).copy()
        eta_box = np.asarray(box, dtype=float) / w
        if eta.shape != (max(n1 - 1, 0), max(n2 - 1, 0)) or eta_box.shape != y.shape:
            raise DimensionMismatch("warm-start multipliers have the wrong shape")
        push = np.zeros_like(y)
        push[:-1, :-1] += eta
        push[:-1, 1:] -= eta
        push[1:, :-1] -= eta
        push[1:, 1:] += eta
        theta += push / w - eta_box
    return DykstraState(theta=theta, eta=eta, eta_box=eta_box, gamma=harmonic_weights(w))


def run_sweeps(state: DykstraState, weights, bounds: BoxBounds | None = None,
               sweeps: int = 1, rel_tol: float = 0.0, feas_tol: float = 0.0,
               reverse: bool = False) -> DykstraState:
    """Continue a Dykstra run in place for up to ``sweeps`` full sweeps.

    Residuals are carried in ``state``; with ``rel_tol=0`` exactly
    ``sweeps`` sweeps are performed.  ``state.feasibility_gap`` afterwards
    includes box violations when ``bounds`` is given.
    """
    w = np.asarray(weights, dtype=float)
    if bounds is None:
        lo = hi = np.zeros((1, 1))
    else:
        lo, hi = np.ascontiguousarray(bounds.lower), np.ascontiguousarray(bounds.upper)
    done, rel, gap = _sweeps(state.theta, state.eta, state.eta_box, 1.0 / w, state.gamma,
                             lo, hi, bounds is not None, reverse, float(rel_tol),
                             float(feas_tol), int(sweeps))
    state.sweeps += int(done)
    state.rel_change = float(rel)
    state.feasibility_gap = float(gap)
    state.converged = bool(rel < rel_tol and gap <= feas_tol)
    return state


def dykstra_project(y, weights, bounds: BoxBounds | None = None,
                    opts: ProjectionOptions = ProjectionOptions(), duals=None):
    """Project ``y`` onto the supermodular cone (and box) in the ``weights`` norm.

    Returns ``(theta, state)``.  Hitting ``opts.max_sweeps`` is not an error;
    ``state.converged`` is ``False`` in that case.
    """
    y, w = _check_inputs(y, weights, bounds)
    if not opts.include_box:
        bounds = None
    if bounds is None and duals is not None:
        duals = (duals[0], np.zeros_like(y))
    state = init_state(y, w, duals)
    run_sweeps(state, w, bounds, sweeps=opts.max_sweeps, rel_tol=opts.rel_tol,
               feas_tol=opts.feas_tol)
    return state.theta.copy(), state


# --- dense oracle -----------------------------------------------------------


def constraint_matrix(shape) -> np.ndarray:
    """Rows ``a`` with ``a @ theta.ravel()`` = second difference of each cell."""
    n1, n2 = shape
    rows = []
    for i in range(n1 - 1):
        for j in range(n2 - 1):
            r = np.zeros((n1, n2))
            r[i : i + 2, j : j + 2] = _SIGNS
            rows.append(r.ravel())
    return np.array(rows).reshape(-1, n1 * n2)


def sparse_constraint_matrix(shape):
    """Sparse form of :func:`constraint_matrix` for large grids."""
    from scipy.sparse import csr_matrix

    n1, n2 = shape
    i, j = np.meshgrid(np.arange(n1 - 1), np.arange(n2 - 1), indexing="ij")
    base = (i * n2 + j).ravel()
    row = np.arange(base.size)
    cols = np.concatenate([base, base + n2 + 1, base + 1, base + n2])
    vals = np.repeat([1.0, 1.0, -1.0, -1.0], base.size)
    return csr_matrix((vals, (np.tile(row, 4), cols)), shape=(base.size, n1 * n2))


def box_meets_cone(bounds: BoxBounds) -> bool:
    """Whether some supermodular grid lies inside ``bounds`` (a linear feasibility problem)."""
    from scipy.optimize import linprog

    shape = bounds.lower.shape
    if min(shape) < 2:
        return bool(np.all(bounds.lower <= bounds.upper))
    A = sparse_constraint_matrix(shape)
    lo = np.where(np.isfinite(bounds.lower), bounds.lower, None).ravel()
    hi = np.where(np.isfinite(bounds.upper), bounds.upper, None).ravel()
    res = linprog(np.zeros(A.shape[1]), A_ub=-A, b_ub=np.zeros(A.shape[0]),
                  bounds=list(zip(lo, hi)), method="highs")
    return res.status == 0


def _feasible_start(A, lo, hi):
    from scipy.optimize import linprog

    n = A.shape[1]
    bnds = [(None if not np.isfinite(a) else a, None if not np.isfinite(b) else b) for a, b in zip(lo, hi)]
    if A.shape[0] == 0:
        x = np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))
        return x
    res = linprog(np.zeros(n), A_ub=-A, b_ub=np.zeros(A.shape[0]), bounds=bnds, method="highs")
    if res.status != 0:
        raise InvalidParameters("feasible set is empty")
    return np.clip(res.x, lo, hi)


def oracle_project(y, weights, bounds: BoxBounds | None = None, max_iter: int = 10_000) -> np.ndarray:
    """Exact weighted projection by a primal active-set QP method (grids <= 5x5).

    Minimises ``0.5 * sum w (x - y)^2`` subject to ``C x >= d`` where the
    rows of ``C`` are the cell second differences and the finite box
    bounds.  Each iteration solves the equality-constrained KKT system on
    the working set; the result is exact up to linear-algebra rounding.
    """
    y, w = _check_inputs(y, weights, bounds)
    if y.shape[0] > 5 or y.shape[1] > 5:
        raise SizeLimit("oracle_project is limited to grids of at most 5x5")
    n = y.size
    yv, wv = y.ravel(), w.ravel()
    A = constraint_matrix(y.shape)
    lo = np.full(n, -np.inf) if bounds is None else bounds.lower.ravel()
    hi = np.full(n, np.inf) if bounds is None else bounds.upper.ravel()
    eye = np.eye(n)
    C_rows, d_vals = [A], [np.zeros(A.shape[0])]
    fin_lo, fin_hi = np.isfinite(lo), np.isfinite(hi)
    C_rows += [eye[fin_lo], -eye[fin_hi]]
    d_vals += [lo[fin_lo], -hi[fin_hi]]
    C = np.vstack(C_rows)
    d = np.concatenate(d_vals)

    x = _feasible_start(A, lo, hi)
    tol = 1e-12 * max(1.0, np.abs(y).max())
    work = [k for k in range(len(d)) if abs(C[k] @ x - d[k]) <= 1e-10]
    work = _independent(C, work)
    for _ in range(max_iter):
        g = wv * (x - yv)
        p, lam = _eqp_step(wv, g, C[work] if work else np.zeros((0, n)))
        if np.max(np.abs(p)) <= tol:
            if not work or lam.min() >= -1e-13:
                return x.reshape(y.shape)
            work.pop(int(np.argmin(lam)))
            continue
        # step length limited by the first blocking constraint
        alpha, block = 1.0, None
        Cp = C @ p
        slack = C @ x - d
        for k in range(len(d)):
            if k in work or Cp[k] >= -1e-15:
                continue
            a = max(slack[k], 0.0) / -Cp[k]
            if a < alpha:
                alpha, block = a, k
        x = x + alpha * p
        if block is not None:
            work.append(block)
            work = _independent(C, work)
    raise RuntimeError("active-set oracle did not terminate")


def _independent(C, work):
    keep = []
    for k in work:
        trial = keep + [k]
        if np.linalg.matrix_rank(C[trial], tol=1e-10) == len(trial):
            keep = trial
    return keep


def _eqp_step(wv, g, Cw):
    """Minimise ``0.5 p^T W p + g^T p`` s.t. ``Cw p = 0``; return ``p`` and multipliers."""
    n = wv.size
    m = Cw.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = np.diag(wv)
    K[:n, n:] = -Cw.T
    K[n:, :n] = Cw
    rhs = np.concatenate([-g, np.zeros(m)])
    sol = np.linalg.solve(K, rhs)
    return sol[:n], sol[n:]
