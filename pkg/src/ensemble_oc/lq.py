"""Exact discrete optimum for ensembles of linear time-invariant members.

With piecewise-constant controls each member's end point is an affine function
of the stacked control values, so the ensemble cost is a strictly convex
quadratic and its minimizer solves a small symmetric positive-definite system.
The flows are computed with matrix exponentials, independently of the RK4
integrator used everywhere else.
"""
from __future__ import annotations

import math
import warnings
from fractions import Fraction
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .control import PiecewiseControl, TimeGrid
from .errors import CapabilityError
from .measures import DiscreteMeasure

ILL_CONDITIONED = 1e12


def expm(A, terms: int = 13) -> np.ndarray:
    """Matrix exponential by scaling and squaring of a truncated Taylor series.

    The matrix is scaled by ``2**-s`` until its 1-norm is at most 1/2, where
    ``terms`` Taylor terms reach double precision, and the result is squared
    ``s`` times.
    """
    A = np.asarray(A, dtype=float)
    norm = np.linalg.norm(A, 1) if A.size else 0.0
    s = 0
    if norm > 0.5:
        s = int(math.ceil(math.log2(norm / 0.5)))
    X = A / (2.0**s)
    n = A.shape[0]
    result = np.eye(n)
    term = np.eye(n)
    for i in range(1, terms + 1):
        term = term @ X / i
        result = result + term
    for _ in range(s):
        result = result @ result
    return result


@dataclass(frozen=True)
class LqSolution:
    u_opt: PiecewiseControl
    cost_opt: float
    per_member_terminal: np.ndarray = field(repr=False)
    gram_condition: float
    #: relative residual of the normal equations
    residual: float = 0.0


def _require_linear(problem):
    if not getattr(problem, "is_linear", False):
        raise CapabilityError(f"{problem!r} is not a linear ensemble")


def input_maps(A, B, M: int):
    """Flow ``exp(A)`` and interval input maps ``Gamma_l = int_{I_l} exp(A(1-s)) B ds``.

    Returns ``(Phi, Gammas)`` with ``Gammas`` of shape (M, n, k).  The map over
    one interval comes from the exponential of the block matrix ``[[A, B], [0, 0]]``.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n, k = B.shape
    h = 1.0 / M
    aug = np.zeros((n + k, n + k))
    aug[:n, :n] = A
    aug[:n, n:] = B
    E = expm(h * aug)
    step, E_B = E[:n, :n], E[:n, n:]
    gammas = np.empty((M, n, k))
    # Gamma_l = exp(A (M - l) h) E_B for l = 1..M (stored 0-based)
    prop = np.eye(n)
    for l in range(M - 1, -1, -1):
        gammas[l] = prop @ E_B
        prop = step @ prop
    return prop, gammas


def solve_lq(problem, measure: DiscreteMeasure, M: int, beta: float, S: int = 4) -> LqSolution:
    """Minimize ``sum_j alpha_j |x_j(1) - y_j|^2 + beta/2 ||u||^2`` over M-interval controls.

    ``S`` only labels the substep count of the returned control's grid.
    """
    _require_linear(problem)
    if not getattr(problem, "quadratic_terminal", False):
        raise CapabilityError("the oracle needs the terminal cost |x - y(theta)|^2")
    if not beta > 0:
        raise ValueError(f"beta must be > 0, got {beta!r}")
    thetas = measure.thetas
    x0 = problem.initial_state(thetas)
    ys = problem.target(thetas)
    n, k = problem.n, problem.k
    dim = M * k
    H = np.zeros((dim, dim))
    rhs = np.zeros(dim)
    G_all = np.empty((measure.N, n, dim))
    c_all = np.empty((measure.N, n))
    for j in range(measure.N):
        th = thetas[j:j + 1]
        Phi, gammas = input_maps(problem.A(th), problem.B(th), M)
        G = gammas.transpose(1, 0, 2).reshape(n, dim)
        c = Phi @ x0[j] - ys[j]
        G_all[j], c_all[j] = G, c
        H += 2.0 * measure.alphas[j] * (G.T @ G)
        rhs -= 2.0 * measure.alphas[j] * (G.T @ c)
    H += (beta / M) * np.eye(dim)
    cond = float(np.linalg.cond(H))
    if cond > ILL_CONDITIONED:
        warnings.warn(f"normal equations are ill conditioned (cond={cond:.3g})", RuntimeWarning)
    u_flat = cho_solve(cho_factor(H), rhs)
    res = float(np.linalg.norm(H @ u_flat - rhs)
                / (np.linalg.norm(H, 2) * np.linalg.norm(u_flat) + np.linalg.norm(rhs)))
    ends = np.einsum("jnd,d->jn", G_all, u_flat) + c_all
    terminal = ends + ys
    cost = float(np.sum(measure.alphas * np.sum(ends * ends, axis=1)) + 0.5 * beta * u_flat @ u_flat / M)
    u_opt = PiecewiseControl(TimeGrid(M, S), u_flat.reshape(M, k))
    return LqSolution(u_opt, cost, terminal, cond, res)


def kalman_matrix(problem, measure: DiscreteMeasure) -> np.ndarray:
    """``[B, A B, ..., A^(nN-1) B]`` of the block-diagonal stacked ensemble."""
    _require_linear(problem)
    n, k, N = problem.n, problem.k, measure.N
    A = np.zeros((n * N, n * N))
    B = np.zeros((n * N, k))
    for j in range(N):
        th = measure.thetas[j:j + 1]
        A[j * n:(j + 1) * n, j * n:(j + 1) * n] = problem.A(th)
        B[j * n:(j + 1) * n] = problem.B(th)
    blocks = [B]
    for _ in range(n * N - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def _exact_kalman_rows(problem, measure: DiscreteMeasure):
    """Kalman matrix of the stacked ensemble with every entry an exact Fraction."""
    n, k, N = problem.n, problem.k, measure.N
    rows = []
    for j in range(N):
        th = measure.thetas[j:j + 1]
        A = [[Fraction(float(v)) for v in r] for r in problem.A(th)]
        cur = [[Fraction(float(v)) for v in r] for r in problem.B(th)]
        member_rows = [list(r) for r in cur]
        for _ in range(n * N - 1):
            cur = [[sum((A[a][b] * cur[b][c] for b in range(n)), Fraction(0)) for c in range(k)]
                   for a in range(n)]
            for a in range(n):
                member_rows[a].extend(cur[a])
        rows.extend(member_rows)
    return rows


def exact_rank(rows) -> int:
    """Rank over the rationals by Gaussian elimination on Fractions."""
    rows = [[Fraction(v) for v in row] for row in rows]
    n_rows = len(rows)
    n_cols = len(rows[0]) if rows else 0
    rank = 0
    for col in range(n_cols):
        pivot = next((r for r in range(rank, n_rows) if rows[r][col] != 0), None)
        if pivot is None:
            continue
        rows[rank], rows[pivot] = rows[pivot], rows[rank]
        p = rows[rank]
        for r in range(rank + 1, n_rows):
            if rows[r][col] != 0:
                f = rows[r][col] / p[col]
                rows[r] = [a - f * b for a, b in zip(rows[r], p)]
        rank += 1
        if rank == n_rows:
            break
    return rank


def kalman_rank(measure: DiscreteMeasure, problem, rtol: float = 1e-9, exact: bool = False) -> int:
    """Rank of the Kalman matrix of the stacked ensemble.

    By default this is the numerical rank (singular values above ``rtol`` times
    the largest).  The Kalman matrix of many close parameters is Vandermonde-like
    and its singular values fall below double precision once ``n*N`` exceeds
    about 20; ``exact=True`` builds the matrix and its rank in rational
    arithmetic from the float parameters instead.
    """
    if exact:
        _require_linear(problem)
        return exact_rank(_exact_kalman_rows(problem, measure))
    K = kalman_matrix(problem, measure)
    sv = np.linalg.svd(K, compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        return 0
    return int(np.sum(sv > rtol * sv[0]))
