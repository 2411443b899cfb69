"""Shared problems and helpers for the test suite."""
import numpy as np
import pytest

from ensemble_oc.control import PiecewiseControl, TimeGrid
from ensemble_oc.measures import Beta44Law, explicit_measure, quantile_quadrature
from ensemble_oc.problems import LinearEnsembleProblem, LogisticProblem, linear2d


class ZeroCostProblem(LinearEnsembleProblem):
    """linear2d dynamics with a == 0, so every costate vanishes."""

    quadratic_terminal = False

    def __init__(self):
        base = linear2d()
        super().__init__(base.A0, base.A1, base.B0, name="zero-cost")

    def terminal_cost(self, x, theta):
        return np.zeros(x.shape[0])

    def terminal_grad(self, x, theta):
        return np.zeros_like(x)


class LinearTerminalProblem(LinearEnsembleProblem):
    """linear2d dynamics with the linear end-point cost a(x) = c.x."""

    quadratic_terminal = False

    def __init__(self, c=(0.7, -0.4)):
        base = linear2d()
        super().__init__(base.A0, base.A1, base.B0, name="linear-terminal")
        self.c = np.asarray(c, dtype=float)

    def terminal_cost(self, x, theta):
        return x @ self.c

    def terminal_grad(self, x, theta):
        return np.tile(self.c, (x.shape[0], 1))


class ScaledCostProblem(LinearEnsembleProblem):
    """linear2d with the terminal cost multiplied by ``scale``."""

    def __init__(self, scale):
        base = linear2d()
        super().__init__(base.A0, base.A1, base.B0, y_tar=base.y_tar, name="scaled")
        self.scale = float(scale)

    def terminal_cost(self, x, theta):
        return self.scale * super().terminal_cost(x, theta)

    def terminal_grad(self, x, theta):
        return self.scale * super().terminal_grad(x, theta)


class StaticProblem(LinearEnsembleProblem):
    """F0 == 0 and F == 0: nothing moves."""

    def __init__(self, x0=(1.0, 0.0)):
        super().__init__(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)), x0=x0, name="static")


def random_control(M, k, seed, S=4, scale=1.0):
    rng = np.random.default_rng(seed)
    return PiecewiseControl(TimeGrid(M, S), scale * rng.standard_normal((M, k)))


@pytest.fixture
def lin():
    return linear2d()


@pytest.fixture
def logistic():
    return LogisticProblem()


@pytest.fixture
def q5():
    return quantile_quadrature(Beta44Law(), 5)


@pytest.fixture
def q20():
    return quantile_quadrature(Beta44Law(), 20)


@pytest.fixture
def theta0():
    return explicit_measure([0.0])
