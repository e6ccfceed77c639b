"""Ground-truth families and reproducible samplers for the experiments.

Randomness comes from numpy's Philox-4x64 counter-based generator, keyed
directly by ``(seed, stream)``; no seed hashing is involved, so a given key
reproduces the same stream on every platform.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameters
from .grid import CountGrid, MinorReport, PmfGrid, is_mtp2

RNG_ALGORITHM = "philox4x64-10"
_CHUNK = 1 << 20


@dataclass(frozen=True)
class SeededRng:
    """Identity of a random stream: algorithm, 64-bit seed, stream index."""

    seed: int
    stream: int = 0
    algorithm: str = RNG_ALGORITHM

    def __post_init__(self):
        if self.algorithm != RNG_ALGORITHM:
            raise InvalidParameters(f"unsupported RNG algorithm {self.algorithm!r}")
        if not (0 <= self.seed < 2**64 and 0 <= self.stream < 2**64):
            raise InvalidParameters("seed and stream must be unsigned 64-bit integers")

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def substream(self, stream: int) -> "SeededRng":
        return SeededRng(self.seed, stream, self.algorithm)

    def metadata(self) -> dict:
        return {"algorithm": self.algorithm, "seed": int(self.seed), "stream": int(self.stream)}


def _gen(rng) -> np.random.Generator:
    if isinstance(rng, SeededRng):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError("rng must be a SeededRng or numpy Generator")


# --- discrete family -------------------------------------------------------


def make_supermodular_pmf(n: int, L: float) -> PmfGrid:
    """``p ∝ exp(1 + log(L) (i-1)(j-1)/(n-1)^2)`` on an ``n x n`` grid.

    The corner log-ratio of the result is exactly ``log L``.
    """
    if n < 2 or not L >= 1 or not math.isfinite(L):
        raise InvalidParameters("need n >= 2 and finite L >= 1")
    k = np.arange(n, dtype=float)
    theta = 1.0 + math.log(L) * np.outer(k, k) / (n - 1) ** 2
    theta -= theta.max()
    p = np.exp(theta)
    return PmfGrid(p / p.sum())


class AliasTable:
    """Walker/Vose alias table for O(1) categorical draws."""

    def __init__(self, probs):
        p = np.asarray(probs, dtype=float).ravel()
        if p.size == 0 or np.any(p < 0) or not p.sum() > 0:
            raise InvalidParameters("alias table needs nonnegative weights with positive sum")
        k = p.size
        scaled = p * (k / p.sum())
        prob = np.ones(k)
        alias = np.arange(k)
        small = [i for i in range(k) if scaled[i] < 1.0]
        large = [i for i in range(k) if scaled[i] >= 1.0]
        while small and large:
            s, g = small.pop(), large.pop()
            prob[s] = scaled[s]
            alias[s] = g
            scaled[g] -= 1.0 - scaled[s]
            (small if scaled[g] < 1.0 else large).append(g)
        # leftovers are 1 up to rounding
        self.prob = prob
        self.alias = alias
        self.size = k

    def sample(self, count: int, gen: np.random.Generator) -> np.ndarray:
        u = gen.random(count) * self.size
        col = u.astype(np.int64)
        np.minimum(col, self.size - 1, out=col)
        return np.where(u - col < self.prob[col], col, self.alias[col])

    def counts(self, N: int, gen: np.random.Generator) -> np.ndarray:
        out = np.zeros(self.size, dtype=np.int64)
        left = int(N)
        while left > 0:
            m = min(left, _CHUNK)
            out += np.bincount(self.sample(m, gen), minlength=self.size)
            left -= m
        return out


def sample_multinomial(p, N: int, rng) -> CountGrid:
    """Aggregate ``N`` categorical draws from ``p`` into a count grid."""
    if N < 0:
        raise InvalidParameters("N must be nonnegative")
    m = np.asarray(p, dtype=float)
    if N == 0:
        return CountGrid(np.zeros(m.shape, dtype=np.int64))
    table = AliasTable(m)
    return CountGrid(table.counts(N, _gen(rng)).reshape(m.shape))


# --- continuous family -----------------------------------------------------

TG_MEAN = (0.5, 0.5)
TG_COV = ((0.2, 0.1), (0.1, 0.2))


@dataclass(frozen=True)
class TruncatedGaussianSpec:
    mean: tuple[float, float] = TG_MEAN
    cov: tuple[tuple[float, float], tuple[float, float]] = TG_COV

    def __post_init__(self):
        (a, b), (c, d) = self.cov
        if b != c or a <= 0 or a * d - b * c <= 0:
            raise InvalidParameters("covariance must be symmetric positive definite")

    @property
    def precision(self) -> np.ndarray:
        (a, b), (_, d) = self.cov
        det = a * d - b * b
        return np.array([[d, -b], [-b, a]]) / det

    def cholesky(self) -> np.ndarray:
        (a, b), (_, d) = self.cov
        l11 = math.sqrt(a)
        l21 = b / l11
        return np.array([[l11, 0.0], [l21, math.sqrt(d - l21 * l21)]])

    def pdf(self, x, y):
        """Untruncated Gaussian density."""
        (a, b), (_, d) = self.cov
        det = a * d - b * b
        P = self.precision
        u = np.asarray(x, dtype=float) - self.mean[0]
        v = np.asarray(y, dtype=float) - self.mean[1]
        q = P[0, 0] * u * u + 2 * P[0, 1] * u * v + P[1, 1] * v * v
        return np.exp(-0.5 * q) / (2 * math.pi * math.sqrt(det))

    def log_mixed_partial(self) -> float:
        """``d^2/dx dy log rho``; constant for a Gaussian."""
        return float(-self.precision[0, 1])


@functools.lru_cache(maxsize=8)
def truncated_gaussian_density(spec: TruncatedGaussianSpec = TruncatedGaussianSpec()):
    """The Gaussian ``spec`` conditioned on the unit square, as an AnalyticDensity."""
    from .density import AnalyticDensity
    from .quadrature import integrate_unit_square

    z = integrate_unit_square(spec.pdf, atol=1e-12)
    corners = [float(spec.pdf(x, y)) for x in (0.0, 1.0) for y in (0.0, 1.0)]
    peak = float(spec.pdf(*spec.mean)) if all(0 <= m <= 1 for m in spec.mean) else max(corners)
    return AnalyticDensity(
        lambda x, y: spec.pdf(x, y) / z,
        normalized=True,
        dmin=min(corners) / z,
        dmax=peak / z,
        beta=math.inf,
        name="truncated-gaussian",
    )


def truncation_mass(spec: TruncatedGaussianSpec = TruncatedGaussianSpec()) -> float:
    """Probability that the untruncated Gaussian lands in the unit square."""
    from .quadrature import integrate_unit_square

    return integrate_unit_square(spec.pdf, atol=1e-12)


def polar_normal_pairs(count: int, gen: np.random.Generator) -> np.ndarray:
    """Standard normal pairs by Marsaglia's polar method, shape ``(count, 2)``."""
    out = np.empty((count, 2))
    filled = 0
    while filled < count:
        m = max(int(1.3 * (count - filled)) + 16, 64)
        u = gen.random((m, 2)) * 2.0 - 1.0
        s = np.einsum("ij,ij->i", u, u)
        keep = (s > 0.0) & (s < 1.0)
        u, s = u[keep], s[keep]
        f = np.sqrt(-2.0 * np.log(s) / s)
        z = u * f[:, None]
        take = min(len(z), count - filled)
        out[filled : filled + take] = z[:take]
        filled += take
    return out


def propose_gaussian(count: int, rng, spec: TruncatedGaussianSpec = TruncatedGaussianSpec()) -> np.ndarray:
    """Untruncated proposals ``mean + L z`` used by the rejection sampler."""
    z = polar_normal_pairs(count, _gen(rng))
    return np.asarray(spec.mean) + z @ spec.cholesky().T


def sample_truncated_gaussian(N: int, rng, spec: TruncatedGaussianSpec = TruncatedGaussianSpec()) -> np.ndarray:
    """``N`` points from the Gaussian restricted to ``[0, 1)^2`` by rejection."""
    if N < 0:
        raise InvalidParameters("N must be nonnegative")
    gen = _gen(rng)
    out = np.empty((N, 2))
    filled = 0
    while filled < N:
        m = min(max(int(2.2 * (N - filled)) + 64, 256), _CHUNK)
        z = propose_gaussian(m, gen, spec)
        z = z[np.all((z >= 0.0) & (z < 1.0), axis=1)]
        take = min(len(z), N - filled)
        out[filled : filled + take] = z[:take]
        filled += take
    return out


def validate_mtp2_generator(density, n: int, tol: float = 0.0) -> MinorReport:
    """Discretise ``density`` on an ``n x n`` grid and check its 2x2 minors."""
    from .density import cell_average_density

    return is_mtp2(cell_average_density(density, n).cells, tol)
