"""Discrete parameter measures and the centred Beta(4,4) law.

Random draws use numpy's PCG64 bit generator seeded with a plain integer, so a
given ``seed`` produces the same atoms on every platform.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from pathlib import Path

import numpy as np

_WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted atoms ``sum_j alpha_j * delta_{theta_j}``.

    ``thetas`` is stored as an ``(N, d)`` array, ``alphas`` as ``(N,)``.  Weights
    must be positive and sum to one.  Pass ``normalized=False`` to allow an
    unnormalized positive measure (used to probe linearity in the weights).
    """

    thetas: np.ndarray = field(repr=False)
    alphas: np.ndarray = field(repr=False)
    normalized: bool = True

    def __post_init__(self):
        th = np.array(self.thetas, dtype=float)
        if th.ndim == 1:
            th = th[:, None]
        al = np.array(self.alphas, dtype=float).reshape(-1)
        if th.ndim != 2 or th.shape[0] != al.shape[0] or th.shape[0] == 0:
            raise ValueError(
                f"need N>=1 atoms with matching weights, got thetas {np.shape(self.thetas)}, "
                f"alphas {np.shape(self.alphas)}"
            )
        if not np.all(np.isfinite(th)) or not np.all(np.isfinite(al)):
            raise ValueError("atoms and weights must be finite")
        if np.any(al <= 0):
            raise ValueError("every weight must be strictly positive")
        if self.normalized and abs(al.sum() - 1.0) > _WEIGHT_TOL:
            raise ValueError(f"weights sum to {al.sum()!r}, expected 1")
        th.setflags(write=False)
        al.setflags(write=False)
        object.__setattr__(self, "thetas", th)
        object.__setattr__(self, "alphas", al)

    @classmethod
    def uniform(cls, thetas) -> "DiscreteMeasure":
        th = np.asarray(thetas, dtype=float)
        n = th.shape[0]
        return cls(th, np.full(n, 1.0 / n))

    @property
    def N(self) -> int:
        return self.thetas.shape[0]

    @property
    def d(self) -> int:
        return self.thetas.shape[1]

    def scaled(self, factor: float) -> "DiscreteMeasure":
        return DiscreteMeasure(self.thetas, self.alphas * factor, normalized=False)

    def __len__(self):
        return self.N


@dataclass(frozen=True)
class Beta44Law:
    """Beta(4,4) shifted from [0, 1] to [lo, hi] = [-1/2, 1/2]."""

    lo: float = -0.5
    hi: float = 0.5
    a: int = 4
    b: int = 4

    @property
    def mean(self) -> float:
        return self.lo + (self.hi - self.lo) * self.a / (self.a + self.b)

    def raw_moment(self, p: int) -> float:
        """E[theta^p] by exact integration of the shifted polynomial density."""
        # theta = lo + w*X, E[X^r] = prod_{i<r} (a+i)/(a+b+i); rational, so odd moments are exactly 0
        lo, w = Fraction(self.lo), Fraction(self.hi) - Fraction(self.lo)
        total = Fraction(0)
        for r in range(p + 1):
            mx = Fraction(1)
            for i in range(r):
                mx *= Fraction(self.a + i, self.a + self.b + i)
            total += comb(p, r) * lo ** (p - r) * w**r * mx
        return float(total)


def beta44_cdf(x: float) -> float:
    """Regularized incomplete beta I_x(4, 4).

    For integer shapes this is the binomial tail
    ``sum_{j=4}^{7} C(7, j) x^j (1-x)^(7-j)``.
    """
    x = float(x)
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"beta44_cdf needs 0 <= x <= 1, got {x}")
    y = 1.0 - x
    return sum(comb(7, j) * x**j * y ** (7 - j) for j in range(4, 8))


def _beta44_quantile(p: float, tol: float = 1e-12) -> float:
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if beta44_cdf(mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; ``seed`` is an unsigned 64-bit integer."""
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


def sample_empirical(law: Beta44Law, N: int, seed: int) -> DiscreteMeasure:
    """``N`` iid draws with equal weights 1/N.

    Each draw is ``G1 / (G1 + G2)`` mapped to ``[lo, hi]``, where ``G1`` and
    ``G2`` are Gamma(4) variables built as sums of four ``-log(U)`` exponentials.
    """
    if int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N!r}")
    N = int(N)
    rng = make_rng(seed)
    # U in (0, 1]: 1 - random() avoids log(0)
    u = 1.0 - rng.random((N, 2, law.a))
    g = -np.log(u).sum(axis=2)
    x = g[:, 0] / (g[:, 0] + g[:, 1])
    thetas = law.lo + (law.hi - law.lo) * x
    return DiscreteMeasure(thetas, np.full(N, 1.0 / N))


def quantile_quadrature(law: Beta44Law, N: int) -> DiscreteMeasure:
    """Equal-weight atoms at the quantiles (j - 1/2)/N of the law."""
    if int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N!r}")
    N = int(N)
    w = law.hi - law.lo
    centre = 0.5 * (law.lo + law.hi)
    thetas = np.empty(N)
    # solve the lower half only and mirror, so pairs are exactly symmetric
    for j in range(N // 2):
        thetas[j] = centre + w * (_beta44_quantile((j + 0.5) / N) - 0.5)
        thetas[N - 1 - j] = 2.0 * centre - thetas[j]
    if N % 2:
        thetas[N // 2] = centre
    return DiscreteMeasure(thetas, np.full(N, 1.0 / N))


def explicit_measure(thetas, alphas=None) -> DiscreteMeasure:
    thetas = np.asarray(thetas, dtype=float)
    if alphas is None:
        return DiscreteMeasure.uniform(thetas)
    return DiscreteMeasure(thetas, alphas)


def measure_moment(m: DiscreteMeasure, p: int) -> float:
    """``sum_j alpha_j theta_j^p`` for a one-dimensional parameter."""
    if p < 0 or int(p) != p:
        raise ValueError(f"moment order must be a nonnegative integer, got {p!r}")
    if m.d != 1:
        raise ValueError("moments are only provided for one-dimensional parameters")
    return float(np.sum(m.alphas * m.thetas[:, 0] ** int(p)))


def write_measure_csv(path, m: DiscreteMeasure, header_comment: str | None = None):
    with Path(path).open("w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        names = ["theta"] if m.d == 1 else [f"theta{i + 1}" for i in range(m.d)]
        w.writerow(names + ["alpha"])
        for th, al in zip(m.thetas, m.alphas):
            w.writerow([repr(float(t)) for t in th] + [repr(float(al))])


def read_measure_csv(path) -> DiscreteMeasure:
    with Path(path).open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    next(reader)
    rows = [[float(x) for x in r] for r in reader if r]
    arr = np.array(rows)
    return DiscreteMeasure(arr[:, :-1], arr[:, -1])
