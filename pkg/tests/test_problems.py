import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ensemble_oc.errors import CapabilityError
from ensemble_oc.problems import LinearEnsembleProblem, LogisticProblem, builtin_problem, linear2d

coord = st.floats(-3, 3, allow_nan=False)
theta = st.floats(-0.5, 0.5, allow_nan=False)


def fd_jacobian(f, x, eps=1e-6):
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = eps
        cols.append((f(x + e) - f(x - e)) / (2 * eps))
    return np.stack(cols, axis=-1)


class TestLinear2d:
    def test_drift_value(self, lin):
        np.testing.assert_array_equal(lin.eval_F0(np.array([1.0, 2.0]), 0.3), [2.0, 0.3])

    def test_structure(self, lin):
        assert (lin.n, lin.k, lin.d) == (2, 2, 1)
        np.testing.assert_array_equal(lin.A(0.3), [[0, 1], [0.3, 0]])
        np.testing.assert_array_equal(lin.B(0.3), np.eye(2))
        np.testing.assert_array_equal(lin.x0(0.1), [0.0, 0.0])
        for i in (1, 2):
            np.testing.assert_array_equal(lin.jac_Fi(np.ones(2), 0.2, i), np.zeros((2, 2)))

    def test_bad_control_index(self, lin):
        with pytest.raises(ValueError):
            lin.jac_Fi(np.zeros(2), 0.0, 3)

    def test_default_target(self, lin):
        assert lin.a(np.zeros(2), 0.0) == 2.0
        np.testing.assert_array_equal(lin.grad_a(np.zeros(2), 0.0), [2.0, 2.0])

    @given(arrays(float, 2, elements=coord), theta)
    def test_linear_consistency(self, x, th):
        lin = linear2d()
        np.testing.assert_allclose(lin.eval_F0(x, th), lin.A(th) @ x, rtol=1e-15, atol=1e-15)
        np.testing.assert_array_equal(lin.eval_F(x, th), lin.B(th))
        np.testing.assert_array_equal(lin.jac_F0(x, th), lin.A(th))

    @given(arrays(float, 2, elements=coord), theta, theta)
    def test_lipschitz_in_theta(self, x, t1, t2):
        lin = linear2d()
        gap = np.linalg.norm(lin.eval_F0(x, t1) - lin.eval_F0(x, t2))
        assert gap <= (1 + np.linalg.norm(x)) * abs(t1 - t2) + 1e-12

    @given(arrays(float, 2, elements=coord), theta)
    def test_cost_nonnegative(self, x, th):
        assert linear2d().a(x, th) >= 0.0

    def test_batched_matches_pointwise(self, lin):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((6, 2))
        th = rng.uniform(-0.5, 0.5, (6, 1))
        batch = lin.drift(x, th)
        for j in range(6):
            np.testing.assert_allclose(batch[j], lin.eval_F0(x[j], th[j]), rtol=1e-15)


class TestLogistic:
    @pytest.mark.parametrize("x", [-0.3, 0.2, 0.5, 0.9, 1.4])
    def test_jacobian_against_fd(self, x):
        p = LogisticProblem()
        fd = fd_jacobian(lambda z: p.eval_F0(z, 1.0), np.array([x]))
        np.testing.assert_allclose(p.jac_F0(np.array([x]), 1.0), [[1 - 2 * x]], rtol=1e-12)
        np.testing.assert_allclose(fd, [[1 - 2 * x]], atol=1e-6)

    def test_fields(self):
        p = LogisticProblem()
        np.testing.assert_array_equal(p.eval_F(np.array([0.3]), 0.2), [[1.0]])
        assert p.x0(0.0)[0] == 0.5
        assert not p.is_linear
        with pytest.raises(CapabilityError):
            p.A(0.0)


@pytest.mark.parametrize("problem", [linear2d(), LogisticProblem(x0=0.2, y_tar=0.4),
                                     LinearEnsembleProblem([[0, 1], [-1, 0]], [[0, 0], [1, 0]],
                                                           [[0], [1]], [[0.5], [0]], x0=[1, 0])])
@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_jacobians_match_fd(problem, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2, 2, problem.n)
    th = rng.uniform(-0.5, 0.5)
    J = problem.jac_F0(x, th)
    fd = fd_jacobian(lambda z: problem.eval_F0(z, th), x)
    assert np.linalg.norm(J - fd) <= 1e-5 * max(1.0, np.linalg.norm(J))
    for i in range(1, problem.k + 1):
        fd_i = fd_jacobian(lambda z: problem.eval_F(z, th)[:, i - 1], x)
        np.testing.assert_allclose(problem.jac_Fi(x, th, i), fd_i, atol=1e-8)
    g = problem.grad_a(x, th)
    fd_a = fd_jacobian(lambda z: np.array(problem.a(z, th)), x)
    np.testing.assert_allclose(g, fd_a, rtol=1e-6, atol=1e-8)


class TestBuiltin:
    def test_names(self):
        assert builtin_problem("linear2d").n == 2
        assert builtin_problem("logistic1d").n == 1
        g = builtin_problem("generic-lti", A0=[[0.0]], A1=[[1.0]], B0=[[1.0]])
        np.testing.assert_array_equal(g.A(0.25), [[0.25]])

    def test_unknown(self):
        with pytest.raises(ValueError, match="unknown problem"):
            builtin_problem("pendulum")

    def test_generic_needs_matrices(self):
        with pytest.raises(ValueError):
            builtin_problem("generic-lti", A0=[[0.0]])

    def test_custom_target(self):
        p = builtin_problem("linear2d", y_tar=(-1.0, 1.0))
        assert p.a(np.array([-1.0, 1.0]), 0.0) == 0.0
