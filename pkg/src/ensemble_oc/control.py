"""Piecewise-constant controls on an equispaced grid of [0, 1].

A control in this space is stored as an ``(M, k)`` array whose row ``l`` is the
constant value on ``[l/M, (l+1)/M)``.  Because the controls are constant per
interval, L2 inner products and norms are exact finite sums.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True)
class TimeGrid:
    """``M`` control intervals on [0, 1], each split into ``S`` integration substeps."""

    M: int
    S: int = 4

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"M must be a positive integer, got {self.M!r}")
        if int(self.S) != self.S or self.S < 1:
            raise ValueError(f"S must be a positive integer, got {self.S!r}")
        object.__setattr__(self, "M", int(self.M))
        object.__setattr__(self, "S", int(self.S))

    @property
    def h(self) -> float:
        return 1.0 / self.M

    @property
    def dt(self) -> float:
        """Substep length h/S."""
        return 1.0 / (self.M * self.S)

    @property
    def n_steps(self) -> int:
        return self.M * self.S

    def nodes(self) -> np.ndarray:
        """Interval nodes l/M, l = 0..M."""
        return np.arange(self.M + 1) / self.M

    def substep_nodes(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) / self.n_steps

    def refine(self, factor: int) -> "TimeGrid":
        """Grid with ``factor`` times as many control intervals and the same substep count."""
        return TimeGrid(self.M * factor, self.S)


@dataclass(frozen=True)
class PiecewiseControl:
    grid: TimeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2 or vals.shape[0] != self.grid.M:
            raise DimensionError(
                f"control values must have shape (M={self.grid.M}, k), got {np.shape(self.values)}"
            )
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, grid: TimeGrid, k: int) -> "PiecewiseControl":
        return cls(grid, np.zeros((grid.M, k)))

    @classmethod
    def constant(cls, grid: TimeGrid, value) -> "PiecewiseControl":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(grid, np.tile(value, (grid.M, 1)))

    @property
    def k(self) -> int:
        return self.values.shape[1]

    @property
    def M(self) -> int:
        return self.grid.M

    def norm(self) -> float:
        # rescale first so the squares neither underflow nor overflow
        scale = float(np.max(np.abs(self.values))) if self.values.size else 0.0
        if scale == 0.0 or not np.isfinite(scale):
            return scale
        return float(scale * np.linalg.norm(self.values / scale) / np.sqrt(self.M))

    def l1_norm(self) -> float:
        """L1 norm of t -> |u(t)|_2."""
        return float(np.sum(np.linalg.norm(self.values, axis=1)) / self.M)

    def with_values(self, values) -> "PiecewiseControl":
        return PiecewiseControl(self.grid, values)

    def upsample(self, factor: int) -> "PiecewiseControl":
        """Same function of time, represented on a grid with ``factor``-times more intervals."""
        return PiecewiseControl(self.grid.refine(factor), np.repeat(self.values, factor, axis=0))

    def on_substeps(self) -> np.ndarray:
        """Value used on each substep, shape (M*S, k)."""
        return np.repeat(self.values, self.grid.S, axis=0)

    def __add__(self, other):
        return axpy(1.0, other, self)

    def __sub__(self, other):
        return axpy(-1.0, other, self)

    def __mul__(self, alpha):
        return self.with_values(float(alpha) * self.values)

    __rmul__ = __mul__


def _check_same(u: PiecewiseControl, v: PiecewiseControl):
    if u.grid.M != v.grid.M or u.values.shape != v.values.shape:
        raise DimensionError(
            f"controls live on different grids: {u.values.shape} vs {v.values.shape}"
        )


def l2_inner(u: PiecewiseControl, v: PiecewiseControl) -> float:
    """L2([0,1], R^k) inner product, exact for piecewise-constant controls."""
    _check_same(u, v)
    return float(np.sum(u.values * v.values) / u.grid.M)


def axpy(alpha: float, u: PiecewiseControl, v: PiecewiseControl) -> PiecewiseControl:
    """Return ``alpha * u + v``."""
    _check_same(u, v)
    return PiecewiseControl(v.grid, alpha * u.values + v.values)


def project_pm(f, grid: TimeGrid) -> PiecewiseControl:
    """Orthogonal L2 projection onto piecewise constants: interval means of ``f``.

    ``f`` holds samples at the ``M*S + 1`` substep nodes (shape ``(M*S+1,)`` or
    ``(M*S+1, k)``); each interval mean is computed with the composite
    trapezoid rule over that interval's ``S`` substeps.  A ``PiecewiseControl``
    on a grid with a multiple of ``M`` intervals is averaged exactly instead,
    since node samples cannot represent its jumps.
    """
    if isinstance(f, PiecewiseControl):
        if f.M % grid.M:
            raise DimensionError(f"cannot project {f.M} intervals onto {grid.M}")
        r = f.M // grid.M
        return PiecewiseControl(grid, f.values.reshape(grid.M, r, f.k).mean(axis=1))
    f = np.asarray(f, dtype=float)
    if f.ndim == 1:
        f = f[:, None]
    if f.shape[0] != grid.n_steps + 1:
        raise DimensionError(
            f"expected {grid.n_steps + 1} samples on the substep grid, got {f.shape[0]}"
        )
    S = grid.S
    # trapezoid panels, then group S panels per interval; mean = (1/S) * sum of panel averages
    panels = 0.5 * (f[:-1] + f[1:])
    means = panels.reshape(grid.M, S, -1).sum(axis=1) / S
    return PiecewiseControl(grid, means)


def write_control_csv(path, u: PiecewiseControl, header_comment: str | None = None):
    """Write ``t,u1,...,uk`` with one row per interval (left endpoint)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"u{i + 1}" for i in range(u.k)])
        for l, row in enumerate(u.values):
            w.writerow([repr(l / u.M)] + [repr(float(x)) for x in row])


def read_control_csv(path, S: int = 4) -> PiecewiseControl:
    rows = []
    with Path(path).open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    if not header or header[0] != "t":
        raise ValueError(f"{path}: expected header starting with 't'")
    for r in reader:
        if r:
            rows.append([float(x) for x in r[1:]])
    vals = np.array(rows, dtype=float)
    return PiecewiseControl(TimeGrid(len(rows), S), vals)
