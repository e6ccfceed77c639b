"""Monte-Carlo experiment harness and log-log rate regression.

Every experiment expands into independent tasks, one per sweep value and
replicate.  A task owns its random stream, keyed by
``SeededRng(seed_base + replicate, stream=sweep_index)``, so results do not
depend on scheduling or thread count.  Records are sorted by
``(sweep, estimator, replicate, metric)`` before they are returned.

Mean rows carry ``replicate = -1``.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .density import (
    cell_average_density,
    empirical_density,
    fit_density,
    hellinger_sq_continuous,
    hellinger_sq_pc,
    fixed_scaling_grid_size,
    scaling_constant,
    PiecewiseConstantDensity,
)
from .errors import DegenerateRegression, InvalidParameters
from .grid import PmfGrid, empirical_pmf, hellinger_sq
from .projection import ProjectionOptions
from .solver import FitResult, SolverOptions, Variant, fit_mle
from .synth import (
    SeededRng,
    make_supermodular_pmf,
    sample_multinomial,
    sample_truncated_gaussian,
    truncated_gaussian_density,
)

CSV_HEADER = ("sweep", "estimator", "replicate", "metric", "value")
MEAN_REPLICATE = -1
ESTIMATORS = ("empirical", "mle", "box", "lb")
METRICS = ("h2_truth", "h2_variance_part", "runtime_seconds")


class ExperimentKind(str, enum.Enum):
    GRID_VARY_N = "grid-n"
    GRID_VARY_SIZE = "grid-size"
    DENSITY_ORACLE = "density-oracle"
    DENSITY_SCALING = "density-scaling"
    RUNTIME = "runtime"


@dataclass(frozen=True)
class ExperimentConfig:
    """One benchmark: what is swept, over how many replicates, with which estimators.

    The fixed parameters not being swept are taken from ``n``, ``log_L`` and
    ``N``.  ``runtime_axis`` picks ``"n"`` or ``"N"`` as the swept quantity
    of a runtime experiment.  ``C=None`` in fixed-scaling mode means the
    constant that maps ``N = 1e8`` to ``n = 200``.
    """

    kind: ExperimentKind
    sweep: tuple
    replicates: int = 5
    seed_base: int = 0
    estimators: tuple = ("empirical", "mle")
    n: int = 16
    log_L: float = 2.0
    N: int = 10**6
    oracle_ns: tuple = (4, 7, 10, 15, 23, 36)
    beta: float = 1.0
    C: float | None = None
    runtime_axis: str = "n"
    outer_tol: float = 1e-5
    max_outer: int = 100
    inner_tol: float = 1e-6
    max_inner: int = 400_000
    epsilon: float = float(np.exp(-30.0))
    regression_range: tuple | None = None
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", ExperimentKind(self.kind))
        object.__setattr__(self, "sweep", tuple(self.sweep))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(self, "oracle_ns", tuple(int(v) for v in self.oracle_ns))
        if not self.sweep:
            raise InvalidParameters("sweep must be nonempty")
        if self.replicates < 1:
            raise InvalidParameters("replicates must be at least 1")
        if self.threads < 1:
            raise InvalidParameters("threads must be at least 1")
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad or not self.estimators:
            raise InvalidParameters(f"unknown estimator(s) {bad}; choose from {ESTIMATORS}")
        if self.runtime_axis not in ("n", "N"):
            raise InvalidParameters("runtime_axis must be 'n' or 'N'")
        if any(not v > 0 for v in self.sweep):
            raise InvalidParameters("sweep values must be positive")
        if self.regression_range is not None:
            lo, hi = self.regression_range
            if lo > hi or hi < min(self.sweep) or lo > max(self.sweep):
                raise InvalidParameters("regression range must overlap the sweep")
        if self.seed_base < 0:
            raise InvalidParameters("seed_base must be nonnegative")

    def solver_options(self, estimator: str) -> SolverOptions:
        variant = {"mle": Variant.UNCONSTRAINED, "box": Variant.BOX, "lb": Variant.LOWER_BOUNDED}[estimator]
        return SolverOptions(
            variant=variant,
            outer_rel_tol=self.outer_tol,
            max_outer=self.max_outer,
            inner=ProjectionOptions(rel_tol=self.inner_tol, max_sweeps=self.max_inner),
            epsilon=self.epsilon,
        )

    def fit_range(self) -> tuple:
        """Regression range; the default covers the top half of the sweep."""
        if self.regression_range is not None:
            return tuple(self.regression_range)
        xs = sorted(self.sweep)
        return (xs[len(xs) // 2], xs[-1]) if len(xs) > 2 else (xs[0], xs[-1])

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["kind"] = self.kind.value
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


@dataclass(frozen=True)
class ExperimentRecord:
    sweep: float
    estimator: str
    replicate: int
    metric: str
    value: float
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.metric not in METRICS:
            raise InvalidParameters(f"unknown metric {self.metric!r}")
        if not self.value >= 0:
            raise InvalidParameters(f"metric value must be nonnegative, got {self.value!r}")

    def key(self):
        return (self.sweep, self.estimator, self.replicate, self.metric)


@dataclass(frozen=True)
class RegressionResult:
    slope: float
    intercept: float
    fit_range: tuple
    residual_rms: float
    points: int


def loglog_slope(xs, ys, range=None) -> RegressionResult:  # noqa: A002 - mirrors the option name
    """Least-squares fit of ``log y = intercept + slope * log x``.

    ``range=(lo, hi)`` keeps the points with ``lo <= x <= hi``.
    """
    x = np.asarray(xs, dtype=float).ravel()
    y = np.asarray(ys, dtype=float).ravel()
    if x.shape != y.shape:
        raise InvalidParameters("xs and ys differ in length")
    if range is not None:
        lo, hi = range
        keep = (x >= lo) & (x <= hi)
        x, y = x[keep], y[keep]
    if x.size < 2:
        raise DegenerateRegression("need at least two points in the fit range")
    if np.any(x <= 0) or np.any(y <= 0):
        raise InvalidParameters("log-log regression needs positive values")
    lx, ly = np.log(x), np.log(y)
    if np.ptp(lx) == 0:
        raise DegenerateRegression("all x values are equal")
    A = np.column_stack([lx, np.ones_like(lx)])
    (slope, intercept), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ np.array([slope, intercept])
    return RegressionResult(
        slope=float(slope),
        intercept=float(intercept),
        fit_range=(float(x.min()), float(x.max())),
        residual_rms=float(np.sqrt(np.mean(resid**2))),
        points=int(x.size),
    )


# --- estimators -------------------------------------------------------------


def _fit_grid(estimator: str, Y, cfg: ExperimentConfig) -> tuple[PmfGrid, dict]:
    if estimator == "empirical":
        return empirical_pmf(Y), {"fell_back_to_empirical": False}
    res = fit_mle(Y, cfg.solver_options(estimator))
    return res.p_hat, _diagnostics(res)


def _diagnostics(res: FitResult) -> dict:
    d = res.diagnostics()
    if res.fell_back_to_empirical:
        d["invariants_ok"] = True
    else:
        d["invariants_ok"] = bool(
            res.final_feasibility <= 1e-4 and abs(res.p_hat.mass.sum() - 1.0) <= 1e-8
        )
    return d


def _grid_task(cfg: ExperimentConfig, k: int, value, rep: int) -> list[ExperimentRecord]:
    if cfg.kind is ExperimentKind.GRID_VARY_N:
        n, N = cfg.n, int(value)
    else:
        n, N = int(value), cfg.N
    truth = make_supermodular_pmf(n, math.exp(cfg.log_L))
    Y = sample_multinomial(truth, N, SeededRng(cfg.seed_base + rep, k))
    out = []
    for est in cfg.estimators:
        p, diag = _fit_grid(est, Y, cfg)
        out.append(ExperimentRecord(value, est, rep, "h2_truth", hellinger_sq(truth, p), diag))
    return out


def _density_fit(est: str, pts, n: int, cfg: ExperimentConfig) -> PiecewiseConstantDensity:
    if est == "empirical":
        return empirical_density(pts, n)
    return fit_density(pts, n, cfg.solver_options(est))


def _density_task(cfg: ExperimentConfig, k: int, value, rep: int) -> list[ExperimentRecord]:
    N = int(value)
    rho = truncated_gaussian_density()
    pts = sample_truncated_gaussian(N, SeededRng(cfg.seed_base + rep, k))
    out = []
    if cfg.kind is ExperimentKind.DENSITY_ORACLE:
        for est in cfg.estimators:
            scores = []
            for n in sorted(cfg.oracle_ns):
                f = _density_fit(est, pts, n, cfg)
                scores.append((hellinger_sq_continuous(f, rho), n))
            best, best_n = min(scores)  # ties go to the smaller n
            diag = {"n": best_n, "h2_by_n": {str(n): h for h, n in scores}}
            out.append(ExperimentRecord(value, est, rep, "h2_truth", best, diag))
    else:
        C = cfg.C if cfg.C is not None else scaling_constant(cfg.beta)
        n = fixed_scaling_grid_size(N, C, cfg.beta)
        bar = _cell_average(n)
        for est in cfg.estimators:
            f = _density_fit(est, pts, n, cfg)
            diag = {"n": n, "C": C, "beta": cfg.beta}
            if f.fit is not None:
                diag.update(_diagnostics(f.fit))
            out.append(ExperimentRecord(value, est, rep, "h2_variance_part", hellinger_sq_pc(f, bar), diag))
    return out


_CELL_AVERAGES: dict[int, PiecewiseConstantDensity] = {}


def _cell_average(n: int) -> PiecewiseConstantDensity:
    # benign race: two threads may compute the same grid once each
    if n not in _CELL_AVERAGES:
        _CELL_AVERAGES[n] = cell_average_density(truncated_gaussian_density(), n)
    return _CELL_AVERAGES[n]


def _runtime_task(cfg: ExperimentConfig, k: int, value, rep: int) -> list[ExperimentRecord]:
    if cfg.runtime_axis == "n":
        n, N = int(value), cfg.N
    else:
        n, N = cfg.n, int(value)
    truth = make_supermodular_pmf(n, math.exp(cfg.log_L))
    Y = sample_multinomial(truth, N, SeededRng(cfg.seed_base + rep, k))
    out = []
    for est in cfg.estimators:
        t0 = time.perf_counter()
        _, diag = _fit_grid(est, Y, cfg)
        elapsed = time.perf_counter() - t0
        diag["n"], diag["N"] = n, N
        out.append(ExperimentRecord(value, est, rep, "runtime_seconds", elapsed, diag))
    return out


def _warm_up():
    # compile the projection kernel once before worker threads race for it
    fit_mle(np.array([[2, 1], [1, 2]]))


def _run(cfg: ExperimentConfig, task) -> list[ExperimentRecord]:
    jobs = [(k, v, r) for k, v in enumerate(cfg.sweep) for r in range(cfg.replicates)]
    _warm_up()
    if cfg.threads == 1:
        chunks = [task(cfg, *j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            chunks = list(pool.map(lambda j: task(cfg, *j), jobs))
    raw = [rec for chunk in chunks for rec in chunk]
    return sort_records(raw + aggregate(raw))


def run_grid_experiment(cfg: ExperimentConfig) -> list[ExperimentRecord]:
    if cfg.kind not in (ExperimentKind.GRID_VARY_N, ExperimentKind.GRID_VARY_SIZE):
        raise InvalidParameters(f"not a grid experiment: {cfg.kind.value}")
    return _run(cfg, _grid_task)


def run_density_experiment(cfg: ExperimentConfig) -> list[ExperimentRecord]:
    if cfg.kind not in (ExperimentKind.DENSITY_ORACLE, ExperimentKind.DENSITY_SCALING):
        raise InvalidParameters(f"not a density experiment: {cfg.kind.value}")
    return _run(cfg, _density_task)


def run_runtime_experiment(cfg: ExperimentConfig) -> list[ExperimentRecord]:
    if cfg.kind is not ExperimentKind.RUNTIME:
        raise InvalidParameters(f"not a runtime experiment: {cfg.kind.value}")
    return _run(cfg, _runtime_task)


def run_experiment(cfg: ExperimentConfig) -> list[ExperimentRecord]:
    if cfg.kind is ExperimentKind.RUNTIME:
        return run_runtime_experiment(cfg)
    if cfg.kind in (ExperimentKind.DENSITY_ORACLE, ExperimentKind.DENSITY_SCALING):
        return run_density_experiment(cfg)
    return run_grid_experiment(cfg)


def density_heatmaps(N: int = 10_000, n: int = 16, seed: int = 0) -> dict[str, np.ndarray]:
    """Cell values ``n^2 p`` of the truth, the frequencies and the MLE, for a visual comparison."""
    pts = sample_truncated_gaussian(N, SeededRng(seed))
    return {
        "truth": cell_average_density(truncated_gaussian_density(), n).values,
        "empirical": empirical_density(pts, n).values,
        "mle": fit_density(pts, n).values,
    }


# --- aggregation and regression ---------------------------------------------


def sort_records(records) -> list[ExperimentRecord]:
    return sorted(records, key=ExperimentRecord.key)


def aggregate(records) -> list[ExperimentRecord]:
    """Mean over replicates for every (sweep, estimator, metric) group."""
    groups: dict[tuple, list[float]] = {}
    for r in records:
        if r.replicate == MEAN_REPLICATE:
            continue
        groups.setdefault((r.sweep, r.estimator, r.metric), []).append(r.value)
    return [
        ExperimentRecord(s, e, MEAN_REPLICATE, m, float(np.mean(v)), {"replicates": len(v)})
        for (s, e, m), v in sorted(groups.items())
    ]


def mean_curve(records, estimator: str, metric: str) -> tuple[np.ndarray, np.ndarray]:
    rows = [r for r in records if r.estimator == estimator and r.metric == metric and r.replicate == MEAN_REPLICATE]
    if not rows:
        rows = aggregate(r for r in records if r.estimator == estimator and r.metric == metric)
    rows.sort(key=lambda r: r.sweep)
    return np.array([r.sweep for r in rows], dtype=float), np.array([r.value for r in rows])


def regress(records, estimator: str, metric: str, range=None) -> RegressionResult:  # noqa: A002
    xs, ys = mean_curve(records, estimator, metric)
    return loglog_slope(xs, ys, range)


# --- output -----------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        raise InvalidParameters("boolean is not a numeric field")
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    f = float(v)
    return str(int(f)) if f.is_integer() and abs(f) < 2**53 else repr(f)


def _parse_num(s: str):
    try:
        return int(s)
    except ValueError:
        return float(s)


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow([_fmt(r.sweep), r.estimator, str(int(r.replicate)), r.metric, repr(float(r.value))])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def records_to_json(records, config: ExperimentConfig | None = None) -> str:
    doc = {
        "header": list(CSV_HEADER),
        "config": config.to_dict() if config is not None else None,
        "rng": None if config is None else {
            "algorithm": SeededRng(0).algorithm,
            "seed_base": config.seed_base,
            "task_key": "seed = seed_base + replicate, stream = sweep index",
        },
        "records": [
            {
                "sweep": r.sweep,
                "estimator": r.estimator,
                "replicate": int(r.replicate),
                "metric": r.metric,
                "value": float(r.value),
                "diagnostics": r.diagnostics,
            }
            for r in records
        ],
    }
    return json.dumps(_jsonable(doc), sort_keys=True, indent=1) + "\n"


def emit(records, format: str = "csv", path=None, config: ExperimentConfig | None = None) -> str:  # noqa: A002
    """Serialise ``records``; write to ``path`` when given and return the text."""
    if format == "csv":
        text = records_to_csv(records)
    elif format == "json":
        text = records_to_json(records, config)
    else:
        raise InvalidParameters(f"unknown format {format!r}")
    if path is not None:
        p = Path(path)
        try:
            with open(p, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            raise OSError(f"cannot write {p}: {exc.strerror or exc}") from exc
    return text


def read_records(path) -> list[ExperimentRecord]:
    """Read back a file written by :func:`emit` (format chosen by suffix)."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read {p}: {exc.strerror or exc}") from exc
    if p.suffix.lower() == ".json":
        doc = json.loads(text)
        return [
            ExperimentRecord(d["sweep"], d["estimator"], int(d["replicate"]), d["metric"],
                             float(d["value"]), d.get("diagnostics") or {})
            for d in doc["records"]
        ]
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise InvalidParameters(f"{p}: missing header {','.join(CSV_HEADER)}")
    return [
        ExperimentRecord(_parse_num(s), e, int(r), m, float(v))
        for s, e, r, m, v in rows[1:]
    ]


# --- preset sweeps ----------------------------------------------------------


def default_config(kind, paper_scale: bool = False, **overrides) -> ExperimentConfig:
    """Preset sweeps: small enough for a desk run unless ``paper_scale``."""
    kind = ExperimentKind(kind)
    reps = 20 if paper_scale else 5
    if kind is ExperimentKind.GRID_VARY_N:
        sweep = tuple(10**k for k in (range(2, 9) if paper_scale else range(3, 7)))
        base = dict(n=16, log_L=2.0, estimators=("empirical", "mle", "box"))
    elif kind is ExperimentKind.GRID_VARY_SIZE:
        sweep = (8, 16, 32, 64, 128) if paper_scale else (8, 16, 32, 64)
        base = dict(N=10**7 if paper_scale else 10**6, log_L=0.2, estimators=("empirical", "mle"))
    elif kind is ExperimentKind.DENSITY_ORACLE:
        sweep = tuple(10**k for k in (range(3, 9) if paper_scale else range(3, 7)))
        ns = (4, 7, 10, 15, 23, 36, 55, 84, 130, 201) if paper_scale else (4, 7, 10, 15, 23, 36)
        base = dict(oracle_ns=ns, estimators=("empirical", "mle"))
        reps = 20 if paper_scale else 3
    elif kind is ExperimentKind.DENSITY_SCALING:
        sweep = tuple(10**k for k in (range(3, 9) if paper_scale else range(3, 7)))
        base = dict(beta=1.0, estimators=("empirical", "mle"))
        reps = 20 if paper_scale else 3
    else:
        sweep = (8, 16, 32, 64, 96, 128, 160) if paper_scale else (8, 16, 24, 32, 48)
        base = dict(N=10**7 if paper_scale else 10**6, log_L=0.2, runtime_axis="n",
                    estimators=("mle", "box"))
        reps = 20 if paper_scale else 3
    base.update(kind=kind, sweep=sweep, replicates=reps)
    base.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**base)


__all__ = [
    "CSV_HEADER",
    "ExperimentConfig",
    "ExperimentKind",
    "ExperimentRecord",
    "MEAN_REPLICATE",
    "RegressionResult",
    "aggregate",
    "default_config",
    "density_heatmaps",
    "emit",
    "loglog_slope",
    "mean_curve",
    "read_records",
    "regress",
    "run_density_experiment",
    "run_experiment",
    "run_grid_experiment",
    "run_runtime_experiment",
    "sort_records",
]
