import numpy as np
import pytest

from slungload.numopt import LbfgsOptions, grad_check, huber, lbfgs_minimize, smooth_l1


def spd(rng, n, cond=100.0):
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return Q @ np.diag(np.geomspace(1.0, cond, n)) @ Q.T


def quadratic(A, b):
    return lambda x: (0.5 * x @ A @ x - b @ x, A @ x - b)


def rosenbrock(x):
    f = 100 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2
    g = np.array([-400 * x[0] * (x[1] - x[0] ** 2) - 2 * (1 - x[0]), 200 * (x[1] - x[0] ** 2)])
    return f, g


def test_quadratic_matches_linear_solve(rng):
    A = spd(rng, 10)
    b = rng.normal(size=10)
    res = lbfgs_minimize(quadratic(A, b), np.zeros(10), LbfgsOptions(grad_tol=1e-9, max_iters=500))
    assert res.converged
    np.testing.assert_allclose(res.x, np.linalg.solve(A, b), atol=1e-8)


def test_rosenbrock():
    res = lbfgs_minimize(rosenbrock, np.array([-1.2, 1.0]), LbfgsOptions(grad_tol=1e-10, max_iters=500))
    np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-6)


def test_already_stationary(rng):
    A = spd(rng, 4)
    b = rng.normal(size=4)
    x_star = np.linalg.solve(A, b)
    res = lbfgs_minimize(quadratic(A, b), x_star, LbfgsOptions(grad_tol=1e-8))
    assert res.iterations <= 1
    np.testing.assert_allclose(res.x, x_star, atol=1e-12)


def test_iteration_bound_on_quadratics(rng):
    for n in (2, 5, 20, 50):
        A = spd(rng, n, cond=10.0)
        b = rng.normal(size=n)
        res = lbfgs_minimize(quadratic(A, b), rng.normal(size=n), LbfgsOptions(grad_tol=1e-6, max_iters=5 * n))
        assert res.converged, (n, res.status)


def test_monotone_values(rng):
    seen = []

    def obj(x):
        f, g = rosenbrock(x)
        return f, g

    def recording(x):
        f, g = obj(x)
        seen.append((x.copy(), f))
        return f, g

    values = []
    x = np.array([-1.2, 1.0])
    for _ in range(30):
        res = lbfgs_minimize(recording, x, LbfgsOptions(max_iters=1))
        values.append(res.value)
        x = res.x
    assert all(b <= a for a, b in zip(values, values[1:]))


def test_line_search_failure_flagged():
    # gradient points the wrong way, so no step can satisfy the descent tests
    res = lbfgs_minimize(lambda x: (float(x @ x), -2 * x), np.ones(3))
    assert not res.converged
    assert res.status == "line search failed"
    np.testing.assert_array_equal(res.x, np.ones(3))


def test_options_validation():
    with pytest.raises(ValueError):
        LbfgsOptions(c1=0.5, c2=0.4)


def test_smooth_l1_examples():
    assert smooth_l1(-1.0) == (0.0, 0.0)
    v, d = smooth_l1(1e-2, 1e-2)
    assert d == pytest.approx(1.0, abs=1e-12)
    assert v == pytest.approx(0.5e-2, abs=1e-15)
    assert smooth_l1(1.0, 1e-2) == pytest.approx((1.0 - 0.5e-2, 1.0))


def test_smooth_l1_derivative_fd(rng):
    mu = 1e-2
    h = 1e-8
    for x in np.concatenate([rng.uniform(-0.02, 0.05, 200), rng.uniform(0, mu, 50)]):
        _, d = smooth_l1(x, mu)
        fd = (smooth_l1(x + h, mu)[0] - smooth_l1(x - h, mu)[0]) / (2 * h)
        assert abs(d - fd) <= 1e-6


def test_smooth_l1_shape():
    x = np.linspace(-0.05, 0.1, 3001)
    v, d = smooth_l1(x)
    assert np.all(v >= 0)
    assert np.all(np.diff(v) >= -1e-18)
    assert np.all(np.diff(d) >= -1e-12)  # convex: derivative non-decreasing
    # value and derivative continuous at 0 and mu
    for x0 in (0.0, 1e-2):
        lo, hi = smooth_l1(np.array([x0 - 1e-12, x0 + 1e-12]))
        assert abs(lo[0] - lo[1]) < 1e-10 and abs(hi[0] - hi[1]) < 1e-9


def test_huber_examples():
    delta = 0.7
    assert huber(np.zeros(3), delta)[0] == 0.0
    r = np.array([0.0, delta, 0.0])
    assert huber(r, delta)[0] == pytest.approx(0.5 * delta**2)
    assert huber(2 * r, delta)[0] == pytest.approx(1.5 * delta**2)


def test_huber_gradient_and_rotation_invariance(rng):
    delta = 1.0
    for _ in range(20):
        r = rng.normal(size=3) * rng.uniform(0.1, 3)
        assert grad_check(lambda x: huber(x, delta), r) < 1e-7
        Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        assert huber(Q @ r, delta)[0] == pytest.approx(huber(r, delta)[0], rel=1e-12)


def test_grad_check(rng):
    A = spd(rng, 6)
    b = rng.normal(size=6)
    obj = quadratic(A, b)
    x = rng.normal(size=6)
    assert grad_check(obj, x) < 1e-7

    def wrong(y):
        f, g = obj(y)
        return f, 1.1 * g

    assert grad_check(wrong, x) == pytest.approx(0.1, rel=1e-4)
