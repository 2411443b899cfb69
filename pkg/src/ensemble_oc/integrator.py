"""Fixed-step RK4 forward pass for the states and backward pass for the costates.

All ensemble members are advanced together as one batched array; each control
interval is split into ``grid.S`` equal substeps and the control is constant on
the interval, so every substep integrates an autonomous vector field.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .control import PiecewiseControl, TimeGrid, project_pm
from .errors import DimensionError, DivergenceError
from .measures import DiscreteMeasure
from .problems import EnsembleProblem

#: states or costates beyond this magnitude abort the integration
BLOWUP = 1e12


@dataclass(frozen=True)
class TrajectoryBundle:
    """States of every member at every substep node, shape (N, M*S + 1, n)."""

    grid: TimeGrid
    thetas: np.ndarray = field(repr=False)
    states: np.ndarray = field(repr=False)

    @property
    def N(self) -> int:
        return self.states.shape[0]

    def interval_nodes(self) -> np.ndarray:
        """States at t = l/M, shape (N, M+1, n)."""
        return self.states[:, :: self.grid.S, :]

    def terminal(self) -> np.ndarray:
        return self.states[:, -1, :]


@dataclass(frozen=True)
class AdjointBundle:
    """Row covectors of every member at every substep node, shape (N, M*S + 1, n)."""

    grid: TimeGrid
    thetas: np.ndarray = field(repr=False)
    costates: np.ndarray = field(repr=False)

    @property
    def N(self) -> int:
        return self.costates.shape[0]

    def interval_nodes(self) -> np.ndarray:
        return self.costates[:, :: self.grid.S, :]


def _check_inputs(problem: EnsembleProblem, measure: DiscreteMeasure, u: PiecewiseControl):
    if u.k != problem.k:
        raise DimensionError(f"control has k={u.k} components, problem expects k={problem.k}")
    if measure.d != problem.d:
        raise DimensionError(f"measure has d={measure.d}, problem expects d={problem.d}")


def _first_bad(block):
    """Index of the first member whose block contains a non-finite or huge entry, else None."""
    bad = ~np.isfinite(block) | (np.abs(block) > BLOWUP)
    if not bad.any():
        return None
    per_member = bad.reshape(bad.shape[0], -1).any(axis=1)
    return int(np.argmax(per_member))


def advance_interval(problem, thetas, x, u_l, dt, S, const_field=None):
    """Advance the batch ``x`` (N, n) through ``S`` RK4 substeps of length ``dt``.

    Returns the states after each substep, shape (N, S, n).  ``const_field`` may
    carry ``F(x, theta) @ u_l`` when the controlled fields do not depend on x.
    """
    out = np.empty((x.shape[0], S, x.shape[1]))
    if const_field is None and problem.constant_control_field:
        const_field = np.einsum("jnk,k->jn", problem.control_field(x, thetas), u_l)

    if const_field is not None:
        def f(y):
            return problem.drift(y, thetas) + const_field
    else:
        def f(y):
            return problem.drift(y, thetas) + np.einsum("jnk,k->jn", problem.control_field(y, thetas), u_l)

    half = 0.5 * dt
    for s in range(S):
        k1 = f(x)
        k2 = f(x + half * k1)
        k3 = f(x + half * k2)
        k4 = f(x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[:, s, :] = x
    return out


class LinearRK4Maps:
    """RK4 over one control interval of a linear member, written as matrix powers.

    For ``x' = A x + B u`` with ``u`` constant, one RK4 step of length ``dt`` is
    exactly ``x+ = P x + Q B u`` with ``P = sum_{i<=4} (dt A)^i / i!`` and
    ``Q = dt sum_{i<=3} (dt A)^i / (i+1)!``.  ``powers[:, s]`` holds ``P^(s+1)``
    and ``inputs[:, s]`` the accumulated input map after ``s+1`` substeps.
    """

    def __init__(self, problem, thetas, dt, S):
        A = np.asarray(problem.drift_jacobian(np.zeros((len(thetas), problem.n)), thetas))
        B = np.asarray(problem.control_field(np.zeros((len(thetas), problem.n)), thetas))
        N, n, _ = A.shape
        eye = np.broadcast_to(np.eye(n), A.shape)
        Z = dt * A
        Z2 = Z @ Z
        Z3 = Z2 @ Z
        P = eye + Z + Z2 / 2.0 + Z3 / 6.0 + (Z3 @ Z) / 24.0
        QB = dt * (eye + Z / 2.0 + Z2 / 6.0 + Z3 / 24.0) @ B
        self.P = P
        self.powers = np.empty((N, S, n, n))
        self.inputs = np.empty((N, S, n, B.shape[2]))
        cur_p, cur_w = P, QB
        for s in range(S):
            self.powers[:, s] = cur_p
            self.inputs[:, s] = cur_w
            cur_w = P @ cur_w + QB
            cur_p = P @ cur_p

    def advance(self, x, u_l):
        return (np.einsum("jsab,jb->jsa", self.powers, x)
                + np.einsum("jsak,k->jsa", self.inputs, u_l))

    def retreat(self, lam):
        """Costates at the S nodes preceding a node with costate ``lam``, nearest first."""
        return np.einsum("ja,jsab->jsb", lam, self.powers)


def make_stepper(problem, thetas, grid: TimeGrid, linear_fast_path: bool = True):
    """Callable ``(x, u_l) -> states after each substep`` for one control interval."""
    if linear_fast_path and getattr(problem, "is_linear", False):
        return LinearRK4Maps(problem, thetas, grid.dt, grid.S).advance

    def step(x, u_l):
        return advance_interval(problem, thetas, x, u_l, grid.dt, grid.S)
    return step


def integrate_forward(problem: EnsembleProblem, measure: DiscreteMeasure,
                      u: PiecewiseControl, linear_fast_path: bool = True) -> TrajectoryBundle:
    """Trajectories of all members under the shared control ``u``.

    Linear members use the equivalent matrix-power form of the same RK4 scheme
    unless ``linear_fast_path`` is False.
    """
    _check_inputs(problem, measure, u)
    grid = u.grid
    thetas = measure.thetas
    N, S = measure.N, grid.S
    states = np.empty((N, grid.n_steps + 1, problem.n))
    x = np.array(problem.initial_state(thetas), dtype=float)
    states[:, 0, :] = x
    step = make_stepper(problem, thetas, grid, linear_fast_path)
    for l in range(grid.M):
        block = step(x, u.values[l])
        j = _first_bad(block)
        if j is not None:
            s = int(np.argmax(~np.isfinite(block[j]).any(axis=1) | (np.abs(block[j]) > BLOWUP).any(axis=1)))
            raise DivergenceError(j, (l * S + s + 1) * grid.dt, "state")
        states[:, l * S + 1:(l + 1) * S + 1, :] = block
        x = block[:, -1, :]
    states.setflags(write=False)
    return TrajectoryBundle(grid, thetas, states)


def _midpoint_states(problem, thetas, states, u: PiecewiseControl, half_node: str):
    """States at substep midpoints, shape (N, T, n).

    ``"hermite"`` uses the cubic Hermite interpolant through the two adjacent
    stored states and their velocities (fourth-order accurate, like RK4);
    ``"average"`` takes the plain mean of the two states (second order).
    """
    N, T1, n = states.shape
    T = T1 - 1
    avg = 0.5 * (states[:, :-1, :] + states[:, 1:, :])
    if half_node == "average":
        return avg
    if half_node != "hermite":
        raise ValueError(f"half_node must be 'hermite' or 'average', got {half_node!r}")
    th_nodes = np.repeat(thetas, T1, axis=0)
    x_nodes = states.reshape(N * T1, n)
    drift = np.asarray(problem.drift(x_nodes, th_nodes)).reshape(N, T1, n)
    G = np.asarray(problem.control_field(x_nodes, th_nodes)).reshape(N, T1, n, -1)
    u_steps = u.on_substeps()
    # both ends of step m see the control of step m
    f_start = drift[:, :-1] + np.einsum("jtnk,tk->jtn", G[:, :-1], u_steps)
    f_end = drift[:, 1:] + np.einsum("jtnk,tk->jtn", G[:, 1:], u_steps)
    return avg + (u.grid.dt / 8.0) * (f_start - f_end)


def _step_jacobians(problem, thetas, states, u: PiecewiseControl, half_node="hermite"):
    """Linearized field at the end, midpoint and start of each substep.

    Returns three arrays of shape (N, T, n, n): for step m (from node m to
    m+1) the Jacobians at x_{m+1}, at the midpoint and at x_m, with the control
    of the enclosing interval.
    """
    N, T1, n = states.shape
    T = T1 - 1
    th_nodes = np.repeat(thetas, T1, axis=0)
    th_mid = np.repeat(thetas, T, axis=0)
    x_nodes = states.reshape(N * T1, n)
    x_mid = _midpoint_states(problem, thetas, states, u, half_node).reshape(N * T, n)

    J_nodes = np.asarray(problem.drift_jacobian(x_nodes, th_nodes)).reshape(N, T1, n, n)
    J_mid = np.asarray(problem.drift_jacobian(x_mid, th_mid)).reshape(N, T, n, n)
    J_end, J_start = J_nodes[:, 1:], J_nodes[:, :-1]

    Jc_nodes = problem.control_jacobians(x_nodes, th_nodes)
    if Jc_nodes is not None:
        k = u.k
        u_steps = u.on_substeps()  # (T, k)
        Jc_nodes = np.asarray(Jc_nodes).reshape(N, T1, k, n, n)
        Jc_mid = np.asarray(problem.control_jacobians(x_mid, th_mid)).reshape(N, T, k, n, n)
        J_end = J_end + np.einsum("tk,jtkab->jtab", u_steps, Jc_nodes[:, 1:])
        J_start = J_start + np.einsum("tk,jtkab->jtab", u_steps, Jc_nodes[:, :-1])
        J_mid = J_mid + np.einsum("tk,jtkab->jtab", u_steps, Jc_mid)
    return J_end, J_mid, J_start


def integrate_adjoint(problem: EnsembleProblem, measure: DiscreteMeasure,
                      u: PiecewiseControl, traj: TrajectoryBundle,
                      half_node: str = "hermite", linear_fast_path: bool = True) -> AdjointBundle:
    """Costates ``lam' = -lam (dF0/dx + sum_i u_i dF_i/dx)`` with ``lam(1) = grad_x a(x(1))``.

    Backward RK4 on the substep grid along the stored trajectory.  The RK4
    stages need states at substep midpoints, which are reconstructed from the
    stored nodes according to ``half_node`` (see ``_midpoint_states``).
    """
    _check_inputs(problem, measure, u)
    grid = u.grid
    if traj.grid != grid or traj.states.shape[0] != measure.N:
        raise DimensionError("trajectory bundle does not match the control grid or the measure")
    thetas = measure.thetas
    N, T, S = measure.N, grid.n_steps, grid.S
    lam = np.empty((N, T + 1, problem.n))
    cur = np.array(problem.terminal_grad(traj.terminal(), thetas), dtype=float)
    lam[:, T, :] = cur
    if linear_fast_path and getattr(problem, "is_linear", False):
        # constant Jacobian: RK4 in reversed time is lam_m = lam_{m+1} P
        maps = LinearRK4Maps(problem, thetas, grid.dt, S)
        for l in range(grid.M - 1, -1, -1):
            block = maps.retreat(lam[:, (l + 1) * S, :])
            j = _first_bad(block)
            if j is not None:
                raise DivergenceError(j, l * grid.h, "costate")
            lam[:, l * S:(l + 1) * S, :] = block[:, ::-1, :]
        lam.setflags(write=False)
        return AdjointBundle(grid, thetas, lam)

    J_end, J_mid, J_start = _step_jacobians(problem, thetas, traj.states, u, half_node)
    dt = grid.dt
    half = 0.5 * dt
    # reversed time s = 1 - t turns the costate equation into dlam/ds = lam J
    for m in range(T - 1, -1, -1):
        Je, Jm, Js = J_end[:, m], J_mid[:, m], J_start[:, m]
        k1 = np.einsum("ja,jab->jb", cur, Je)
        k2 = np.einsum("ja,jab->jb", cur + half * k1, Jm)
        k3 = np.einsum("ja,jab->jb", cur + half * k2, Jm)
        k4 = np.einsum("ja,jab->jb", cur + dt * k3, Js)
        cur = cur + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        lam[:, m, :] = cur
        if m % S == 0:
            j = _first_bad(lam[:, m:m + S, :])
            if j is not None:
                raise DivergenceError(j, m * dt, "costate")
    lam.setflags(write=False)
    return AdjointBundle(grid, thetas, lam)


def weak_convergence_probe(problem: EnsembleProblem, theta, base_u: PiecewiseControl,
                           amplitude: float, frequencies, quantity: str = "state",
                           intervals_per_period: int = 16) -> list[float]:
    """Sup-distance between the response to ``u + amplitude*sin(2 pi m t)`` and to ``u``.

    For each frequency ``m`` (a multiple of ``base_u.M``) the control grid is
    refined to ``intervals_per_period`` intervals per oscillation, the
    oscillation is projected onto it, and the sup over substep nodes of the
    state (``quantity="state"``) or costate (``quantity="adjoint"``) deviation
    is returned.  The oscillations converge weakly to zero, so the distances
    should decrease with ``m``.
    """
    if quantity not in ("state", "adjoint"):
        raise ValueError(f"quantity must be 'state' or 'adjoint', got {quantity!r}")
    M = base_u.M
    measure = DiscreteMeasure(np.atleast_2d(np.asarray(theta, dtype=float)).reshape(1, -1), [1.0])
    out = []
    for m in frequencies:
        if int(m) != m or m <= 0 or m % M:
            raise ValueError(f"frequency {m} must be a positive multiple of M={M}")
        factor = int(m) // M * intervals_per_period
        base = base_u.upsample(factor)
        grid = base.grid
        t = grid.substep_nodes()
        wave = amplitude * np.sin(2.0 * np.pi * m * t)
        pert = project_pm(np.repeat(wave[:, None], base.k, axis=1), grid)
        u_m = base + pert
        tr0 = integrate_forward(problem, measure, base)
        tr1 = integrate_forward(problem, measure, u_m)
        if quantity == "state":
            a, b = tr0.states, tr1.states
        else:
            a = integrate_adjoint(problem, measure, base, tr0).costates
            b = integrate_adjoint(problem, measure, u_m, tr1).costates
        out.append(float(np.max(np.linalg.norm(a - b, axis=-1))))
    return out


def write_bundle_csv(path, bundle, full_grid: bool = False, header_comment: str | None = None,
                     first_index: int = 0):
    """Write ``j,theta,t,x1..xn`` (or ``l1..ln`` for costates), interval nodes unless ``full_grid``.

    Members are numbered from ``first_index``, which lets a single member keep its
    position in the ensemble.
    """
    if isinstance(bundle, TrajectoryBundle):
        data, prefix = bundle.states, "x"
    else:
        data, prefix = bundle.costates, "l"
    grid = bundle.grid
    step = 1 if full_grid else grid.S
    idx = np.arange(0, grid.n_steps + 1, step)
    times = idx / grid.n_steps
    n = data.shape[2]
    d = bundle.thetas.shape[1]
    th_names = ["theta"] if d == 1 else [f"theta{i + 1}" for i in range(d)]
    with Path(path).open("w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["j"] + th_names + ["t"] + [f"{prefix}{i + 1}" for i in range(n)])
        for j in range(data.shape[0]):
            th = [repr(float(v)) for v in bundle.thetas[j]]
            for i, t in zip(idx, times):
                w.writerow([j + first_index] + th + [repr(float(t))] + [repr(float(v)) for v in data[j, i]])
