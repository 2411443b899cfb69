"""Projected gradient field and iterative maximum principle minimizers on U_M.

Both methods keep the step size ``gamma`` fixed until a trial step is
rejected, then shrink it by ``tau``; costates are only recomputed after an
accepted step.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .control import PiecewiseControl, axpy
from .errors import DivergenceError
from .gradient import assemble_gradient, costate_field_terms
from .integrator import (
    BLOWUP,
    TrajectoryBundle,
    make_stepper,
    integrate_adjoint,
    integrate_forward,
)
from .measures import DiscreteMeasure
from .objective import CostReport, cost_from_trajectories

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerConfig:
    """Step-size and stopping settings shared by both methods.

    Attributes:
        gamma0: initial step size.
        tau: factor applied to the step after a rejected trial.
        c: sufficient-decrease constant (projected gradient only).
        max_iter: number of iterations, accepted or not.
        grad_tol: stop once the gradient norm drops to this value; 0 disables.
        correction: apply the costate correction in the maximum-principle sweep.
    """

    gamma0: float = 1.0
    tau: float = 0.5
    c: float = 1e-4
    max_iter: int = 500
    grad_tol: float = 0.0
    correction: bool = True

    def __post_init__(self):
        if not self.gamma0 > 0:
            raise ValueError(f"gamma0 must be > 0, got {self.gamma0!r}")
        if not 0 < self.tau < 1:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau!r}")
        if not 0 < self.c < 1:
            raise ValueError(f"c must lie in (0, 1), got {self.c!r}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 0:
            raise ValueError(f"max_iter must be a nonnegative integer, got {self.max_iter!r}")
        if not self.grad_tol >= 0:
            raise ValueError(f"grad_tol must be >= 0, got {self.grad_tol!r}")


@dataclass(frozen=True)
class IterRecord:
    """One iteration; ``cost``/``integral``/``reg`` describe the iterate kept after it.

    ``grad_norm`` is the gradient norm at that iterate; ``trial_cost`` is the cost
    of the candidate that was tested.
    """

    iter: int
    cost: float
    integral: float
    reg: float
    gamma: float
    accepted: bool
    grad_norm: float
    trial_cost: float


@dataclass
class RunTrace:
    method: str
    config: OptimizerConfig
    records: list = field(default_factory=list)
    u: PiecewiseControl | None = None
    report: CostReport | None = None
    trajectories: TrajectoryBundle | None = None
    grad_norm: float = math.nan
    stop_reason: str = "max_iter"

    @property
    def n_accepted(self) -> int:
        return sum(1 for r in self.records[1:] if r.accepted)

    def accepted_costs(self) -> np.ndarray:
        return np.array([r.cost for r in self.records if r.accepted])

    def is_monotone(self) -> bool:
        costs = self.accepted_costs()
        return bool(np.all(np.diff(costs) <= 0))

    def write_csv(self, path, header_comment: str | None = None):
        with Path(path).open("w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "cost", "integral", "reg", "gamma", "accepted", "grad_norm"])
            for r in self.records:
                w.writerow([r.iter, repr(r.cost), repr(r.integral), repr(r.reg), repr(r.gamma),
                            int(r.accepted), repr(r.grad_norm)])


def _gradient(problem, measure, u, beta, traj):
    adj = integrate_adjoint(problem, measure, u, traj)
    return adj, assemble_gradient(problem, measure, u, beta, traj, adj)


def _with_context(err: DivergenceError, method: str, it: int) -> DivergenceError:
    return DivergenceError(err.member, err.time, err.what, f"{method} iteration {it}")


def run_projected_gradient(problem, measure: DiscreteMeasure, u0: PiecewiseControl, beta: float,
                           cfg: OptimizerConfig = OptimizerConfig()) -> RunTrace:
    """Projected gradient field with backtracking on the sufficient-decrease test.

    A trial ``u - gamma * du`` is accepted when
    ``cost(u) >= cost(u_new) + c * gamma * ||du||^2``; otherwise ``gamma *= tau``.
    """
    if not beta > 0:
        raise ValueError(f"beta must be > 0, got {beta!r}")
    trace = RunTrace("grad", cfg)
    u = u0
    gamma = float(cfg.gamma0)
    traj = integrate_forward(problem, measure, u)
    rep = cost_from_trajectories(problem, measure, u, beta, traj)
    _, grad = _gradient(problem, measure, u, beta, traj)
    trace.records.append(IterRecord(0, rep.total, rep.integral_term, rep.reg_term, gamma, True,
                                    grad.norm, rep.total))
    for it in range(1, cfg.max_iter + 1):
        if cfg.grad_tol > 0 and grad.norm <= cfg.grad_tol:
            trace.stop_reason = "grad_tol"
            break
        du = grad.delta_u
        u_new = axpy(-gamma, du, u)
        try:
            traj_new = integrate_forward(problem, measure, u_new)
        except DivergenceError as err:
            raise _with_context(err, "grad", it) from err
        rep_new = cost_from_trajectories(problem, measure, u_new, beta, traj_new)
        step_gamma = gamma
        accepted = rep.total >= rep_new.total + cfg.c * gamma * grad.norm**2
        if accepted:
            u, traj, rep = u_new, traj_new, rep_new
            try:
                _, grad = _gradient(problem, measure, u, beta, traj)
            except DivergenceError as err:
                raise _with_context(err, "grad", it) from err
        else:
            gamma *= cfg.tau
        trace.records.append(IterRecord(it, rep.total, rep.integral_term, rep.reg_term, step_gamma,
                                        accepted, grad.norm, rep_new.total))
    trace.u, trace.report, trace.trajectories, trace.grad_norm = u, rep, traj, grad.norm
    log.info("grad: %d records, cost %.6g, |du| %.3g (%s)", len(trace.records), rep.total,
             grad.norm, trace.stop_reason)
    return trace


def pmp_sweep(problem, measure: DiscreteMeasure, u: PiecewiseControl, beta: float, gamma: float,
              traj: TrajectoryBundle, lam_nodes: np.ndarray, correction: bool = True):
    """One forward sweep of the iterative maximum principle.

    On interval ``l`` the new value maximizes
    ``-sum_j alpha_j lam_corr_j F(x_new_j) v - beta/2 |v|^2 - |v - u_l|^2 / (2 gamma)``,
    i.e. ``v = (u_l - gamma g) / (1 + gamma beta)`` with
    ``g = sum_j alpha_j (lam_corr_j F(x_new_j))^T`` taken at the left node; the
    members are then advanced over the interval with ``v``.  With ``correction``
    the costates at the right node are shifted by
    ``alpha_j (grad a(x_new) - grad a(x_old))``.

    Returns the new control and its trajectory bundle.
    """
    grid = u.grid
    thetas, alphas = measure.thetas, measure.alphas
    S, M = grid.S, grid.M
    x_old = traj.interval_nodes()
    states = np.empty_like(traj.states)
    x = np.array(traj.states[:, 0, :])
    states[:, 0, :] = x
    lam_corr = np.array(lam_nodes[:, 0, :])
    values = np.empty_like(u.values)
    step = make_stepper(problem, thetas, grid)
    for l in range(M):
        F = np.asarray(problem.control_field(x, thetas))
        g = np.einsum("j,jk->k", alphas, np.einsum("jnk,jn->jk", F, lam_corr))
        v = (u.values[l] - gamma * g) / (1.0 + gamma * beta)
        values[l] = v
        block = step(x, v)
        bad = ~np.isfinite(block) | (np.abs(block) > BLOWUP)
        if bad.any():
            j = int(np.argmax(bad.reshape(bad.shape[0], -1).any(axis=1)))
            raise DivergenceError(j, (l + 1) / M, "state")
        states[:, l * S + 1:(l + 1) * S + 1, :] = block
        x = block[:, -1, :]
        lam_corr = np.array(lam_nodes[:, l + 1, :])
        if correction:
            lam_corr += alphas[:, None] * (problem.terminal_grad(x, thetas)
                                           - problem.terminal_grad(x_old[:, l + 1, :], thetas))
    states.setflags(write=False)
    u_new = PiecewiseControl(grid, values)
    return u_new, TrajectoryBundle(grid, thetas, states)


def run_iterative_pmp(problem, measure: DiscreteMeasure, u0: PiecewiseControl, beta: float,
                      cfg: OptimizerConfig = OptimizerConfig()) -> RunTrace:
    """Iterative maximum principle; a sweep is accepted iff it strictly lowers the cost."""
    if not beta > 0:
        raise ValueError(f"beta must be > 0, got {beta!r}")
    trace = RunTrace("pmp", cfg)
    u = u0
    gamma = float(cfg.gamma0)
    traj = integrate_forward(problem, measure, u)
    rep = cost_from_trajectories(problem, measure, u, beta, traj)
    adj, grad = _gradient(problem, measure, u, beta, traj)
    trace.records.append(IterRecord(0, rep.total, rep.integral_term, rep.reg_term, gamma, True,
                                    grad.norm, rep.total))
    for it in range(1, cfg.max_iter + 1):
        if cfg.grad_tol > 0 and grad.norm <= cfg.grad_tol:
            trace.stop_reason = "grad_tol"
            break
        try:
            u_new, traj_new = pmp_sweep(problem, measure, u, beta, gamma, traj,
                                        adj.interval_nodes(), cfg.correction)
        except DivergenceError as err:
            raise _with_context(err, "pmp", it) from err
        rep_new = cost_from_trajectories(problem, measure, u_new, beta, traj_new)
        step_gamma = gamma
        accepted = rep.total > rep_new.total
        if accepted:
            u, traj, rep = u_new, traj_new, rep_new
            try:
                adj, grad = _gradient(problem, measure, u, beta, traj)
            except DivergenceError as err:
                raise _with_context(err, "pmp", it) from err
        else:
            gamma *= cfg.tau
        trace.records.append(IterRecord(it, rep.total, rep.integral_term, rep.reg_term, step_gamma,
                                        accepted, grad.norm, rep_new.total))
    trace.u, trace.report, trace.trajectories, trace.grad_norm = u, rep, traj, grad.norm
    log.info("pmp: %d records, cost %.6g, |du| %.3g (%s)", len(trace.records), rep.total,
             grad.norm, trace.stop_reason)
    return trace


def pmp_residual(problem, measure: DiscreteMeasure, u: PiecewiseControl, beta: float,
                 rule: str = "interval") -> float:
    """Normalized violation of the maximum condition ``u = -(1/beta) sum_j alpha_j (lam_j F_j)^T``.

    With ``rule="interval"`` the costate term on interval ``l`` is the average of
    its two end nodes, the same quadrature as the discrete gradient, so the
    residual equals ``max_l |du_l| / (beta * max(1, ||u||))``.  ``rule="node"``
    pairs ``u_l`` with the costate term at the left node of the interval only,
    which carries an extra first-order quadrature error in ``1/M``.
    """
    if not beta > 0:
        raise ValueError(f"beta must be > 0, got {beta!r}")
    traj = integrate_forward(problem, measure, u)
    adj = integrate_adjoint(problem, measure, u, traj)
    g = costate_field_terms(problem, measure, traj.interval_nodes(), adj.interval_nodes())
    if rule == "interval":
        term = 0.5 * (g[:-1] + g[1:])
    elif rule == "node":
        term = g[:-1]
    else:
        raise ValueError(f"rule must be 'interval' or 'node', got {rule!r}")
    viol = np.linalg.norm(u.values + term / beta, axis=1)
    return float(np.max(viol) / max(1.0, u.norm()))


def config_dict(cfg: OptimizerConfig) -> dict:
    return asdict(cfg)
