import numpy as np
import pytest

from faultflow.errors import InvalidArgumentError
from faultflow.services.mirror_map import (
    MirrorMapEN, bregman, bregman_columns, mirror_gradient, mirror_hessian_block, mirror_potential,
    solve_hessian_blocks,
)


def _direct_bregman(m, W, W_ref):
    return mirror_potential(m, W) - mirror_potential(m, W_ref) - np.sum(mirror_gradient(m, W_ref) * (W - W_ref))


def test_euclidean_map_gives_half_squared_distance(rng):
    m = MirrorMapEN.euclidean(3)
    W, W_ref = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    assert bregman(m, W, W_ref) == pytest.approx(0.5 * np.sum((W - W_ref) ** 2))
    assert bregman(m, W, W) == 0.0


def test_bregman_matches_definition(rng):
    m = MirrorMapEN(beta=1.0, alpha=1.0, eps=0.01, xi=np.array([1.0, 2.0, 0.5]))
    for _ in range(50):
        W, W_ref = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
        assert bregman(m, W, W_ref) == pytest.approx(_direct_bregman(m, W, W_ref), rel=1e-9, abs=1e-12)


def test_bregman_columns_sum_to_total(rng):
    m = MirrorMapEN(beta=0.5, alpha=0.2, eps=1e-3, xi=np.array([1.0, 3.0]))
    W, W_ref = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
    per_column = bregman_columns(m, W, W_ref)
    assert per_column.shape == (2,)
    assert np.sum(per_column) == pytest.approx(bregman(m, W, W_ref))


def test_bregman_strong_convexity(rng):
    for _ in range(2000):
        xi = rng.uniform(0.1, 5.0, size=2)
        m = MirrorMapEN(beta=rng.uniform(0.1, 2.0), alpha=rng.uniform(0.0, 1.0), eps=10 ** rng.uniform(-6, 0), xi=xi)
        W = rng.normal(scale=10 ** rng.uniform(-4, 1), size=(3, 2))
        W_ref = rng.normal(scale=10 ** rng.uniform(-4, 1), size=(3, 2))
        value = bregman(m, W, W_ref)
        assert value >= 0.0
        assert value >= 0.5 * m.strong_convexity * np.sum((W - W_ref) ** 2) * (1 - 1e-12)


def test_hessian_special_cases():
    quadratic = MirrorMapEN(beta=2.0, alpha=0.0, eps=0.1, xi=np.array([1.5]))
    np.testing.assert_allclose(mirror_hessian_block(quadratic, np.ones((3, 1)), 0), 3.0 * np.eye(3))
    m = MirrorMapEN(beta=1.0, alpha=0.5, eps=0.04, xi=np.array([2.0]))
    np.testing.assert_allclose(mirror_hessian_block(m, np.zeros((3, 1)), 0), (2.0 + 0.5 / 0.2) * np.eye(3))


def test_hessian_matches_gradient_differences(rng):
    m = MirrorMapEN(beta=1.0, alpha=1.0, eps=0.01, xi=np.array([1.0, 2.0]))
    W = rng.normal(size=(4, 2))
    step = 1e-6
    for j in range(2):
        numeric = np.zeros((4, 4))
        for i in range(4):
            E = np.zeros_like(W)
            E[i, j] = step
            numeric[:, i] = (mirror_gradient(m, W + E)[:, j] - mirror_gradient(m, W - E)[:, j]) / (2 * step)
        np.testing.assert_allclose(mirror_hessian_block(m, W, j), numeric, rtol=1e-5, atol=1e-7)


def test_hessian_lower_bound(rng):
    for _ in range(100):
        xi = rng.uniform(0.1, 3.0, size=3)
        m = MirrorMapEN(beta=rng.uniform(0.1, 2.0), alpha=rng.uniform(0.0, 2.0), eps=10 ** rng.uniform(-6, 0), xi=xi)
        W = rng.normal(size=(5, 3))
        for j in range(3):
            K = mirror_hessian_block(m, W, j)
            assert np.min(np.linalg.eigvalsh(K)) >= m.beta * xi[j] * (1 - 1e-10)


def test_gradient_is_column_separable(rng):
    m = MirrorMapEN(beta=1.0, alpha=0.3, eps=1e-3, xi=np.ones(3))
    W = rng.normal(size=(4, 3))
    moved = W.copy()
    moved[:, 2] += rng.normal(size=4)
    np.testing.assert_array_equal(mirror_gradient(m, W)[:, :2], mirror_gradient(m, moved)[:, :2])


def test_sherman_morrison_solve_matches_dense(rng):
    for _ in range(50):
        m = MirrorMapEN(beta=rng.uniform(0.1, 2.0), alpha=rng.uniform(0.0, 2.0),
                        eps=10 ** rng.uniform(-4, 0), xi=rng.uniform(0.1, 3.0, size=3))
        W, V = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
        X = solve_hessian_blocks(m, W, V)
        for j in range(3):
            np.testing.assert_allclose(X[:, j], np.linalg.solve(mirror_hessian_block(m, W, j), V[:, j]),
                                       rtol=1e-9, atol=1e-12)


def test_unit_quadratic_solve_is_identity(rng):
    m = MirrorMapEN(beta=1.0, alpha=0.0, eps=1.0, xi=np.ones(2))
    W, V = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
    np.testing.assert_array_equal(solve_hessian_blocks(m, W, V), V)


def test_invalid_parameters_and_shapes():
    with pytest.raises(InvalidArgumentError):
        MirrorMapEN(beta=0.0, alpha=0.1, eps=1e-3, xi=np.ones(2))
    with pytest.raises(InvalidArgumentError):
        MirrorMapEN(beta=1.0, alpha=-0.1, eps=1e-3, xi=np.ones(2))
    with pytest.raises(InvalidArgumentError):
        MirrorMapEN(beta=1.0, alpha=0.1, eps=1e-3, xi=np.array([1.0, 0.0]))
    m = MirrorMapEN(beta=1.0, alpha=0.1, eps=1e-3, xi=np.ones(2))
    with pytest.raises(InvalidArgumentError):
        mirror_potential(m, np.zeros((3, 3)))
    with pytest.raises(InvalidArgumentError):
        solve_hessian_blocks(m, np.zeros((3, 2)), np.zeros((4, 2)))
    with pytest.raises(InvalidArgumentError):
        mirror_hessian_block(m, np.zeros((3, 2)), 2)


def test_bregman_rate_along_mirror_descent_flow(rng):
    # d/dt D(W* || W) = <K(W) W', W - W*>; with W' = K^{-1} G the Hessian cancels
    m = MirrorMapEN(beta=1.0, alpha=0.3, eps=1e-2, xi=np.array([1.0, 4.0, 2.5]))
    h = 1e-6
    for _ in range(20):
        W, W_star, G = rng.normal(size=(5, 3)), rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
        W_dot = solve_hessian_blocks(m, W, G)
        numeric = (bregman(m, W_star, W + h * W_dot) - bregman(m, W_star, W - h * W_dot)) / (2 * h)
        via_hessian = sum((W - W_star)[:, j] @ mirror_hessian_block(m, W, j) @ W_dot[:, j] for j in range(3))
        assert numeric == pytest.approx(np.sum(G * (W - W_star)), rel=1e-6, abs=1e-8)
        assert via_hessian == pytest.approx(np.sum(G * (W - W_star)), rel=1e-9, abs=1e-12)
