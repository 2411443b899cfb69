"""Discretized gradient of the end-point ensemble cost on piecewise-constant controls."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .control import PiecewiseControl
from .errors import DimensionError
from .integrator import AdjointBundle, TrajectoryBundle
from .measures import DiscreteMeasure
from .objective import endpoint_cost


@dataclass(frozen=True)
class GradientReport:
    delta_u: PiecewiseControl
    norm: float


def costate_field_terms(problem, measure: DiscreteMeasure, x_nodes, lam_nodes) -> np.ndarray:
    """``sum_j alpha_j F(x_j, theta_j)^T lam_j^T`` at each interval node, shape (M+1, k).

    ``x_nodes`` and ``lam_nodes`` have shape (N, M+1, n).  The member sum runs
    in index order through a single einsum, independent of any threading.
    """
    N, L, n = x_nodes.shape
    th = np.repeat(measure.thetas, L, axis=0)
    F = np.asarray(problem.control_field(x_nodes.reshape(N * L, n), th)).reshape(N, L, n, -1)
    per_member = np.einsum("jlnk,jln->jlk", F, lam_nodes)
    return np.einsum("j,jlk->lk", measure.alphas, per_member)


def assemble_gradient(problem, measure: DiscreteMeasure, u: PiecewiseControl, beta: float,
                      traj: TrajectoryBundle, adj: AdjointBundle) -> GradientReport:
    """Trapezoid approximation of the projected gradient field on each interval.

    ``du_l = 1/2 sum_j alpha_j (F(x_{l-1}^j)^T lam_{l-1}^j + F(x_l^j)^T lam_l^j) + beta u_l``
    using interval-node states and costates only.
    """
    if (traj.grid != u.grid or adj.grid != u.grid or traj.N != measure.N
            or adj.N != measure.N):
        raise DimensionError("trajectory/adjoint bundles do not match the control and the measure")
    g = costate_field_terms(problem, measure, traj.interval_nodes(), adj.interval_nodes())
    du = 0.5 * (g[:-1] + g[1:]) + beta * u.values
    delta = PiecewiseControl(u.grid, du)
    return GradientReport(delta, delta.norm())


def fd_gradient(problem, measure: DiscreteMeasure, u: PiecewiseControl, beta: float,
                epsilon: float = 1e-6) -> PiecewiseControl:
    """Central-difference gradient, rescaled to the L2 Riesz representative.

    The partial derivative along coordinate ``(l, i)`` equals ``<G, e_{l,i}>``
    = ``G_{l,i} / M``, so each difference quotient is multiplied by ``M``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    base = np.array(u.values)
    out = np.empty_like(base)
    for l in range(u.M):
        for i in range(u.k):
            plus = base.copy()
            minus = base.copy()
            plus[l, i] += epsilon
            minus[l, i] -= epsilon
            cp = endpoint_cost(problem, measure, u.with_values(plus), beta).total
            cm = endpoint_cost(problem, measure, u.with_values(minus), beta).total
            out[l, i] = (cp - cm) / (2.0 * epsilon) * u.M
    return PiecewiseControl(u.grid, out)
