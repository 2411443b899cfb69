"""Ensembles of affine-control systems ``x' = F0(x, theta) + F(x, theta) u``.

Every evaluator works on a batch of ensemble members at once: ``x`` has shape
``(N, n)`` and ``theta`` has shape ``(N, d)``; row ``j`` of the result belongs
to member ``j``.  Evaluators must be pure functions of their arguments.
"""
from __future__ import annotations

import numpy as np

from .errors import CapabilityError


class EnsembleProblem:
    """Interface for an ensemble of affine-control systems with end-point cost.

    Subclasses implement the batched field, Jacobian and cost evaluators.
    ``control_jacobians`` may return ``None`` when the controlled fields do not
    depend on the state, which lets the adjoint pass skip that term.
    """

    n: int
    k: int
    d: int = 1
    is_linear: bool = False
    #: True when a(x, theta) = |x - target(theta)|^2, required by the LQ oracle
    quadratic_terminal: bool = False
    #: True when F(x, theta) does not depend on x
    constant_control_field: bool = False

    def drift(self, x, theta):
        raise NotImplementedError

    def control_field(self, x, theta):
        """Controlled vector fields stacked as columns, shape (N, n, k)."""
        raise NotImplementedError

    def drift_jacobian(self, x, theta):
        """d F0 / dx, shape (N, n, n)."""
        raise NotImplementedError

    def control_jacobians(self, x, theta):
        """d F_i / dx for i = 1..k, shape (N, k, n, n), or None if identically zero."""
        raise NotImplementedError

    def initial_state(self, theta):
        raise NotImplementedError

    def terminal_cost(self, x, theta):
        """Nonnegative end-point cost a(x, theta), shape (N,)."""
        raise NotImplementedError

    def terminal_grad(self, x, theta):
        raise NotImplementedError

    def target(self, theta):
        if not self.quadratic_terminal:
            raise CapabilityError(f"{type(self).__name__} has no quadratic terminal target")
        raise NotImplementedError

    def A(self, theta):
        raise CapabilityError(f"{type(self).__name__} is not linear")

    def B(self, theta):
        raise CapabilityError(f"{type(self).__name__} is not linear")

    # single-member conveniences

    def eval_F0(self, x, theta):
        return self.drift(np.atleast_2d(x), _theta_rows(theta, 1))[0]

    def eval_F(self, x, theta):
        return self.control_field(np.atleast_2d(x), _theta_rows(theta, 1))[0]

    def jac_F0(self, x, theta):
        return self.drift_jacobian(np.atleast_2d(x), _theta_rows(theta, 1))[0]

    def jac_Fi(self, x, theta, i):
        """Jacobian of the ``i``-th controlled field, ``i`` counted from 1."""
        if not 1 <= i <= self.k:
            raise ValueError(f"control index must be in 1..{self.k}, got {i}")
        J = self.control_jacobians(np.atleast_2d(x), _theta_rows(theta, 1))
        if J is None:
            return np.zeros((self.n, self.n))
        return J[0, i - 1]

    def x0(self, theta):
        return self.initial_state(_theta_rows(theta, 1))[0]

    def a(self, x, theta):
        return float(self.terminal_cost(np.atleast_2d(x), _theta_rows(theta, 1))[0])

    def grad_a(self, x, theta):
        return self.terminal_grad(np.atleast_2d(x), _theta_rows(theta, 1))[0]


def _theta_rows(theta, n_rows):
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    if th.ndim == 1:
        th = th[None, :]
    if th.shape[0] != n_rows:
        th = np.broadcast_to(th, (n_rows, th.shape[1]))
    return th


class LinearEnsembleProblem(EnsembleProblem):
    """Members ``x' = A(theta) x + B(theta) u`` with cost ``|x(1) - y_tar|^2``.

    ``A(theta) = A0 + theta * A1`` and ``B(theta) = B0 + theta * B1`` for a
    scalar parameter.  The initial state and the target do not depend on theta.
    """

    is_linear = True
    quadratic_terminal = True
    constant_control_field = True

    def __init__(self, A0, A1, B0, B1=None, x0=None, y_tar=None, name="generic-lti"):
        self.A0 = np.array(A0, dtype=float)
        self.A1 = np.array(A1, dtype=float)
        self.B0 = np.array(B0, dtype=float)
        if self.B0.ndim == 1:
            self.B0 = self.B0[:, None]
        self.n, self.k = self.B0.shape
        self.B1 = np.zeros_like(self.B0) if B1 is None else np.array(B1, dtype=float).reshape(self.n, self.k)
        if self.A0.shape != (self.n, self.n) or self.A1.shape != (self.n, self.n):
            raise ValueError(f"A0 and A1 must be {self.n}x{self.n}")
        self.x0_vec = np.zeros(self.n) if x0 is None else np.array(x0, dtype=float).reshape(self.n)
        self.y_tar = np.zeros(self.n) if y_tar is None else np.array(y_tar, dtype=float).reshape(self.n)
        self.name = name
        self._cache_key = None
        self._cache_val = None

    def _mats(self, theta):
        t = np.asarray(theta, dtype=float)[:, 0]
        key = t.tobytes()
        cached = self._cache_val
        if cached is not None and cached[0] == key:
            return cached[1], cached[2]
        A = self.A0[None] + t[:, None, None] * self.A1[None]
        B = self.B0[None] + t[:, None, None] * self.B1[None]
        self._cache_val = (key, A, B)
        return A, B

    def A(self, theta):
        return self._mats(_theta_rows(theta, 1))[0][0]

    def B(self, theta):
        return self._mats(_theta_rows(theta, 1))[1][0]

    def drift(self, x, theta):
        A, _ = self._mats(theta)
        return np.einsum("jab,jb->ja", A, x)

    def control_field(self, x, theta):
        return self._mats(theta)[1]

    def drift_jacobian(self, x, theta):
        return self._mats(theta)[0]

    def control_jacobians(self, x, theta):
        return None

    def initial_state(self, theta):
        return np.tile(self.x0_vec, (len(theta), 1))

    def target(self, theta):
        return np.tile(self.y_tar, (len(theta), 1))

    def terminal_cost(self, x, theta):
        r = x - self.y_tar
        return np.sum(r * r, axis=1)

    def terminal_grad(self, x, theta):
        return 2.0 * (x - self.y_tar)

    def __repr__(self):
        return f"LinearEnsembleProblem(name={self.name!r}, n={self.n}, k={self.k})"


class LogisticProblem(EnsembleProblem):
    """Scalar test ensemble ``x' = theta x (1 - x) + u`` with cost ``(x(1) - y)^2``."""

    n = 1
    k = 1
    quadratic_terminal = True
    constant_control_field = True

    def __init__(self, x0=0.5, y_tar=0.0):
        self.x0_val = float(x0)
        self.y_tar = np.array([float(y_tar)])
        self.name = "logistic1d"

    def drift(self, x, theta):
        return theta[:, :1] * x * (1.0 - x)

    def control_field(self, x, theta):
        return np.ones((x.shape[0], 1, 1))

    def drift_jacobian(self, x, theta):
        return (theta[:, :1] * (1.0 - 2.0 * x))[:, :, None]

    def control_jacobians(self, x, theta):
        return None

    def initial_state(self, theta):
        return np.full((len(theta), 1), self.x0_val)

    def target(self, theta):
        return np.tile(self.y_tar, (len(theta), 1))

    def terminal_cost(self, x, theta):
        return (x[:, 0] - self.y_tar[0]) ** 2

    def terminal_grad(self, x, theta):
        return 2.0 * (x - self.y_tar)

    def __repr__(self):
        return f"LogisticProblem(x0={self.x0_val}, y_tar={self.y_tar[0]})"


DEFAULT_Y_TAR = (-1.0, -1.0)


def linear2d(y_tar=DEFAULT_Y_TAR, x0=(0.0, 0.0)) -> LinearEnsembleProblem:
    """Ensemble of ``A(theta) = [[0, 1], [theta, 0]]``, ``B = I`` systems in the plane."""
    return LinearEnsembleProblem(
        A0=[[0.0, 1.0], [0.0, 0.0]],
        A1=[[0.0, 0.0], [1.0, 0.0]],
        B0=np.eye(2),
        x0=x0,
        y_tar=y_tar,
        name="linear2d",
    )


BUILTIN_PROBLEMS = ("linear2d", "generic-lti", "logistic1d")


def builtin_problem(name: str, **params) -> EnsembleProblem:
    """Construct one of the built-in problems.

    ``linear2d`` accepts ``y_tar`` and ``x0``; ``generic-lti`` needs ``A0``,
    ``A1``, ``B0`` and optionally ``B1``, ``x0``, ``y_tar``; ``logistic1d``
    accepts scalar ``x0`` and ``y_tar``.
    """
    if name == "linear2d":
        return linear2d(**params)
    if name == "generic-lti":
        missing = [key for key in ("A0", "A1", "B0") if key not in params]
        if missing:
            raise ValueError(f"generic-lti needs matrices {missing}")
        return LinearEnsembleProblem(name="generic-lti", **params)
    if name == "logistic1d":
        return LogisticProblem(**params)
    raise ValueError(f"unknown problem {name!r}; choose from {', '.join(BUILTIN_PROBLEMS)}")
