"""Maximum-likelihood fitting of MTP2 PMFs by a proximal Newton method.

The penalised objective

    F(theta) = <Y, theta> / N - sum(exp(theta))

is concave, and its maximiser over the supermodular cone is the MTP2 MLE
(the normaliser is automatically 1 at the optimum).  Each outer step
replaces ``-F`` by its second-order model at the current iterate.  Since
the Hessian is diagonal with entries ``exp(theta)``, the model step is a
weighted projection of

    theta + (Y / N) / exp(theta) - 1

onto the feasible set, computed by :func:`mtp2.projection.dykstra_project`.

Three variants differ only in the box passed to the projection:

``mle``  no box;
``box``  ``log(2Y/(3N)) <= theta <= min(log(2Y/N), 0)`` (needs all Y >= 1);
``lb``   ``log(eps) <= theta <= 0``, which keeps small-N fits finite.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameters, ZeroCount
from .grid import (
    CountGrid,
    LogPmfGrid,
    PmfGrid,
    empirical_pmf,
    feasibility_gap,
    normalize_log,
)
from .projection import BoxBounds, ProjectionOptions, box_meets_cone, dykstra_project

EXP_FLOOR = -745.0
# largest violation a fitted log-PMF may show before the box is checked for emptiness
FEASIBILITY_TOL = 1e-4


class Variant(str, enum.Enum):
    UNCONSTRAINED = "mle"
    BOX = "box"
    LOWER_BOUNDED = "lb"


@dataclass(frozen=True)
class SolverOptions:
    """Outer-loop settings.

    ``init`` selects the starting point: ``"log"`` uses ``log(max(Y,1)/N)``
    (clamped into the box for the ``box`` variant); ``"prob"`` uses the
    frequencies ``Y/N`` themselves as the starting log-mass.
    ``warm_start`` seeds each projection with the multipliers of the
    previous one, which cuts inner sweeps sharply once the outer loop settles.
    ``step_guard`` halves a step (up to ten times) whose objective falls by
    more than 1e-8.  It is off by default: projections are only feasible to
    ``inner.feas_tol``, so near the optimum the objective can drop by more
    than 1e-8 on a perfectly good step, and the halving then stalls the fit.
    """

    variant: Variant = Variant.UNCONSTRAINED
    outer_rel_tol: float = 1e-5
    max_outer: int = 100
    inner: ProjectionOptions = field(default_factory=ProjectionOptions)
    epsilon: float = float(np.exp(-30.0))
    init: str = "log"
    step_guard: bool = False
    warm_start: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if not self.outer_rel_tol > 0 or self.max_outer < 1:
            raise InvalidParameters("need outer_rel_tol > 0 and max_outer >= 1")
        if not 0 < self.epsilon < 1:
            raise InvalidParameters("epsilon must lie in (0, 1)")
        if self.init not in ("log", "prob"):
            raise InvalidParameters(f"unknown init {self.init!r}")


@dataclass
class FitResult:
    theta_hat: LogPmfGrid
    p_hat: PmfGrid
    outer_iters: int
    objective_trace: list[float]
    final_feasibility: float
    fell_back_to_empirical: bool = False
    box_empty: bool = False
    theta_tilde: np.ndarray | None = None
    inner_sweeps: list[int] = field(default_factory=list)
    inner_not_converged: int = 0
    converged: bool = False
    variant: str = "mle"

    @property
    def fell_back(self) -> bool:
        return self.fell_back_to_empirical

    @property
    def mass_before_normalization(self) -> float:
        """``sum(exp(theta_tilde))``; 1 at the exact unconstrained optimum."""
        if self.theta_tilde is None:
            return 1.0
        return float(np.exp(self.theta_tilde).sum())

    def diagnostics(self) -> dict:
        return {
            "variant": self.variant,
            "outer_iters": int(self.outer_iters),
            "converged": bool(self.converged),
            "fell_back_to_empirical": bool(self.fell_back_to_empirical),
            "box_empty": bool(self.box_empty),
            "final_feasibility": float(self.final_feasibility),
            "inner_sweeps_total": int(sum(self.inner_sweeps)),
            "inner_not_converged": int(self.inner_not_converged),
            "objective": self.objective_trace[-1] if self.objective_trace else None,
            "mass_before_normalization": self.mass_before_normalization,
        }


def _counts(Y) -> np.ndarray:
    c = np.asarray(Y.counts if isinstance(Y, CountGrid) else CountGrid(Y).counts)
    if c.sum() < 1:
        raise InvalidParameters("need at least one observation")
    return c


def build_box(Y) -> BoxBounds:
    """Confidence box ``[log(2Y/(3N)), min(log(2Y/N), 0)]`` for every entry."""
    c = _counts(Y)
    zeros = np.argwhere(c == 0)
    if len(zeros):
        raise ZeroCount(zeros)
    N = c.sum()
    return BoxBounds(np.log(2 * c / (3 * N)), np.minimum(np.log(2 * c / N), 0.0))


def objective(theta, Y) -> float:
    c = _counts(Y)
    t = np.asarray(theta, dtype=float)
    if t.shape != c.shape:
        raise InvalidParameters("theta and Y shapes differ")
    return float(np.sum(c * t) / c.sum() - np.sum(np.exp(np.maximum(t, EXP_FLOOR))))


def newton_step(theta, Y, bounds: BoxBounds | None = None,
                inner: ProjectionOptions = ProjectionOptions(), duals=None):
    """One proximal Newton step; returns ``(theta_new, projection_state)``.

    ``duals`` optionally warm-starts the projection with multipliers from
    the previous step.
    """
    c = _counts(Y)
    t = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(t)):
        raise InvalidParameters("theta must be finite")
    lam = np.exp(np.maximum(t, EXP_FLOOR))
    target = t + (c / c.sum()) / lam - 1.0
    return dykstra_project(target, lam, bounds, inner, duals=duals)


def _rel_change(new, old) -> float:
    return float(np.linalg.norm(new - old) / max(np.linalg.norm(old), 1e-12))


def _bounds_for(c, opts: SolverOptions) -> BoxBounds | None:
    if opts.variant is Variant.BOX:
        return build_box(c)
    if opts.variant is Variant.LOWER_BOUNDED:
        return BoxBounds.constant(c.shape, np.log(opts.epsilon), 0.0)
    return None


def _initial(c, bounds, opts: SolverOptions) -> np.ndarray:
    N = c.sum()
    if opts.init == "prob":
        t0 = c / N
    else:
        t0 = np.log(np.maximum(c, 1) / N)
    if bounds is not None:
        t0 = np.clip(t0, bounds.lower, bounds.upper)
    return t0


def _box_violation(theta, bounds: BoxBounds) -> float:
    return float(max(np.max(bounds.lower - theta), np.max(theta - bounds.upper), 0.0))


def _empirical_fallback(c, opts: SolverOptions, box_empty: bool = False) -> FitResult:
    p = empirical_pmf(c)
    with np.errstate(divide="ignore"):
        theta = np.log(p.mass)
    return FitResult(
        theta_hat=LogPmfGrid(theta, normalized=True),
        p_hat=p,
        outer_iters=0,
        objective_trace=[],
        final_feasibility=feasibility_gap(np.where(np.isfinite(theta), theta, 0.0)),
        fell_back_to_empirical=True,
        box_empty=box_empty,
        variant=opts.variant.value,
    )


def fit_mle(Y, opts: SolverOptions = SolverOptions()) -> FitResult:
    """Fit an MTP2 PMF to the counts ``Y``.

    For the ``box`` variant a count grid with zeros cannot be boxed; the
    result is then the empirical frequency matrix with
    ``fell_back_to_empirical=True`` and an empty objective trace.  The same
    fallback applies, with ``box_empty=True``, when the fit ends infeasible
    and a linear program confirms that no supermodular grid fits in the box.
    """
    c = _counts(Y)
    try:
        bounds = _bounds_for(c, opts)
    except ZeroCount:
        return _empirical_fallback(c, opts)

    theta = _initial(c, bounds, opts)
    trace: list[float] = []
    sweeps: list[int] = []
    missed = 0
    converged = False
    duals = None
    it = 0
    for it in range(1, opts.max_outer + 1):
        new, state = newton_step(theta, c, bounds, opts.inner, duals)
        if opts.warm_start:
            duals = state.duals(np.exp(np.maximum(theta, EXP_FLOOR)))
        sweeps.append(state.sweeps)
        missed += not state.converged
        value = objective(new, c)
        # convergence is judged on the undamped step so that halving cannot fake it
        change = _rel_change(new, theta)
        # iterates after the first are feasible, so halving stays feasible
        if opts.step_guard and trace and value < trace[-1] - 1e-8:
            for _ in range(10):
                new = 0.5 * (theta + new)
                value = objective(new, c)
                if value >= trace[-1] - 1e-8:
                    break
        trace.append(value)
        theta = new
        # a step whose projection hit its cap is not a finished Newton step
        if change < opts.outer_rel_tol and state.converged:
            converged = True
            break

    gap = feasibility_gap(theta)
    if opts.variant is Variant.BOX and max(gap, _box_violation(theta, bounds)) > FEASIBILITY_TOL \
            and not box_meets_cone(bounds):
        return _empirical_fallback(c, opts, box_empty=True)

    theta_hat = normalize_log(theta)
    p = np.exp(theta_hat.theta)
    p = p / p.sum()
    return FitResult(
        theta_hat=theta_hat,
        p_hat=PmfGrid(p),
        outer_iters=it,
        objective_trace=trace,
        final_feasibility=gap,
        theta_tilde=theta,
        inner_sweeps=sweeps,
        inner_not_converged=missed,
        converged=converged,
        variant=opts.variant.value,
    )


def log_likelihood(theta_hat, Y) -> float:
    """``<Y, theta>`` for a normalised log-PMF (``-inf`` entries with zero counts are fine)."""
    c = _counts(Y)
    t = np.asarray(theta_hat, dtype=float)
    mask = c > 0
    return float(np.sum(c[mask] * t[mask]))


__all__ = [
    "FitResult",
    "SolverOptions",
    "Variant",
    "build_box",
    "fit_mle",
    "log_likelihood",
    "newton_step",
    "objective",
]
