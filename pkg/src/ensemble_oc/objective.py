"""Ensemble cost functionals evaluated on the discretized dynamics."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .control import PiecewiseControl
from .integrator import TrajectoryBundle, integrate_forward
from .measures import DiscreteMeasure


@dataclass(frozen=True)
class CostReport:
    """Cost split into the averaged end-point (or running) term and the L2 penalty."""

    total: float
    integral_term: float
    reg_term: float
    per_member: np.ndarray = field(repr=False)

    def as_row(self):
        return [self.total, self.integral_term, self.reg_term]


def _check_beta(beta):
    if not beta > 0:
        raise ValueError(f"beta must be > 0, got {beta!r}")


def _report(per_member, u, beta) -> CostReport:
    per_member = np.asarray(per_member, dtype=float)
    integral = float(np.sum(per_member))
    reg = 0.5 * beta * float(np.sum(u.values * u.values)) / u.M
    return CostReport(integral + reg, integral, reg, per_member)


def cost_from_trajectories(problem, measure: DiscreteMeasure, u: PiecewiseControl,
                           beta: float, traj: TrajectoryBundle) -> CostReport:
    """End-point cost from an already integrated bundle."""
    a = problem.terminal_cost(traj.terminal(), measure.thetas)
    return _report(measure.alphas * a, u, beta)


def endpoint_cost(problem, measure: DiscreteMeasure, u: PiecewiseControl, beta: float) -> CostReport:
    """``sum_j alpha_j a(x_j(1), theta_j) + beta/2 ||u||^2``."""
    _check_beta(beta)
    traj = integrate_forward(problem, measure, u)
    return cost_from_trajectories(problem, measure, u, beta, traj)


def running_cost(problem, measure: DiscreteMeasure, u: PiecewiseControl, beta: float,
                 time_measure: DiscreteMeasure, a_running, snap_tol: float | None = None) -> CostReport:
    """``sum_j alpha_j sum_q w_q a(t_q, x_j(t_q), theta_j) + beta/2 ||u||^2``.

    ``time_measure`` atoms are times in [0, 1] and must sit on substep nodes; an
    atom is snapped to the nearest node when it lies within ``snap_tol``
    (default half a substep) and rejected otherwise.  ``a_running(t, x, theta)``
    receives batched ``x`` (N, n) and ``theta`` (N, d) and returns (N,).
    """
    _check_beta(beta)
    if time_measure.d != 1:
        raise ValueError("time measure must be one-dimensional")
    grid = u.grid
    T = grid.n_steps
    if snap_tol is None:
        snap_tol = 0.5 * grid.dt
    times = time_measure.thetas[:, 0]
    idx = np.rint(times * T).astype(int)
    off = np.abs(times - idx / T)
    if np.any(idx < 0) or np.any(idx > T) or np.any(off > snap_tol):
        q = int(np.argmax((idx < 0) | (idx > T) | (off > snap_tol)))
        raise ValueError(f"time atom t={times[q]!r} is not on the substep grid (tolerance {snap_tol:g})")
    traj = integrate_forward(problem, measure, u)
    per_member = np.zeros(measure.N)
    for q in range(time_measure.N):
        t_q = idx[q] / T
        vals = np.asarray(a_running(t_q, traj.states[:, idx[q], :], measure.thetas), dtype=float)
        per_member = per_member + time_measure.alphas[q] * vals
    return _report(measure.alphas * per_member, u, beta)


def write_cost_csv(path, report: CostReport, header_comment: str | None = None):
    with Path(path).open("w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["total", "integral", "reg"])
        w.writerow([repr(float(v)) for v in report.as_row()])
