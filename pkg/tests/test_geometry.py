import math

import numpy as np
import pytest

from faultflow.errors import InvalidArgumentError, IsolabilityViolationError, RelativeDegreeError
from faultflow.services.geometry import (
    Channel, DiffMapJacobians, SubspaceBasis, angle_profile, diffmap_jacobians, isolability_report,
    isolating_projector, orthonormalize, principal_angles, relative_degrees, residue_subspace,
)
from faultflow.services.system_model import SystemModel, linear_model


def _random_basis(rng, n, r):
    return orthonormalize(rng.normal(size=(n, r)))


def _pair_with_angles(rng, theta, extra):
    """
    Subspaces with prescribed principal angles theta, rotated at random

    U = span(e_1..e_k, e_2k+1..e_2k+extra), V = span(cos t_i e_i + sin t_i e_k+i).
    """
    k = len(theta)
    n = 2 * k + extra
    U = np.zeros((n, k + extra))
    U[:k, :k] = np.eye(k)
    U[2 * k:, k:] = np.eye(extra)
    V = np.zeros((n, k))
    V[:k] = np.diag(np.cos(theta))
    V[k:2 * k] = np.diag(np.sin(theta))
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return SubspaceBasis(Q @ U), SubspaceBasis(Q @ V)


def _jacobians(F_a, E_s=None, order=1, output_dim=1):
    rows = np.asarray(F_a).shape[0]
    E_s = np.zeros((rows, 0)) if E_s is None else np.asarray(E_s, float)
    return DiffMapJacobians(order, output_dim, np.zeros((rows, 2)), np.asarray(F_a, float), E_s,
                            np.zeros(2), np.zeros(1))


def test_orthogonal_and_identical_lines():
    e1 = orthonormalize(np.array([[1.0], [0.0]]))
    e2 = orthonormalize(np.array([[0.0], [1.0]]))
    assert principal_angles(e1, e2) == pytest.approx([math.pi / 2])
    assert principal_angles(e1, e1) == pytest.approx([0.0], abs=1e-15)


def test_principal_angles_match_prescribed_angles(rng):
    for _ in range(200):
        k, extra = int(rng.integers(1, 6)), int(rng.integers(0, 4))
        theta = np.sort(rng.uniform(0.0, math.pi / 2, size=k))
        theta[0] = 10.0 ** rng.uniform(-12, -1)
        theta = np.sort(theta)
        U, V = _pair_with_angles(rng, theta, extra)
        for angles in (principal_angles(U, V), principal_angles(V, U)):
            assert angles.shape == (k,)
            assert np.all(np.diff(angles) >= 0.0)
            np.testing.assert_allclose(angles, theta, rtol=1e-6, atol=1e-13)


def test_intersecting_subspaces_have_zero_angle(rng):
    for _ in range(200):
        n = int(rng.integers(3, 21))
        shared = rng.normal(size=(n, 1))
        r_u, r_v = int(rng.integers(0, n - 1)), int(rng.integers(0, n - 1))
        U = orthonormalize(np.hstack([shared, rng.normal(size=(n, r_u))]))
        V = orthonormalize(np.hstack([rng.normal(size=(n, r_v)), shared]))
        assert principal_angles(U, V)[0] < 1e-9


def test_trivial_intersection_iff_rank_sum(rng):
    for _ in range(100):
        n = int(rng.integers(3, 13))
        r_u, r_v = int(rng.integers(1, n)), int(rng.integers(1, n))
        U, V = _random_basis(rng, n, r_u), _random_basis(rng, n, r_v)
        trivial = np.linalg.matrix_rank(np.hstack([U.basis, V.basis]), tol=1e-8) == r_u + r_v
        assert (principal_angles(U, V)[0] > 1e-6) == trivial


def test_shared_direction_gives_zero_angle(rng):
    for _ in range(20):
        n = int(rng.integers(3, 10))
        shared = rng.normal(size=(n, 1))
        U = orthonormalize(np.hstack([shared, rng.normal(size=(n, 1))]))
        V = orthonormalize(np.hstack([shared, rng.normal(size=(n, 1))]))
        assert principal_angles(U, V)[0] < 1e-7
        assert np.linalg.matrix_rank(np.hstack([U.basis, V.basis]), tol=1e-8) < U.rank + V.rank


def test_symmetry_and_rotation_invariance(rng):
    for _ in range(20):
        n = 8
        U, V = _random_basis(rng, n, 3), _random_basis(rng, n, 4)
        np.testing.assert_allclose(principal_angles(U, V), principal_angles(V, U), atol=1e-10)
        Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
        rotated = principal_angles(SubspaceBasis(Q @ U.basis), SubspaceBasis(Q @ V.basis))
        np.testing.assert_allclose(rotated, principal_angles(U, V), atol=1e-10)


def test_principal_angles_errors(rng):
    with pytest.raises(InvalidArgumentError):
        principal_angles(_random_basis(rng, 3, 1), _random_basis(rng, 4, 1))
    with pytest.raises(InvalidArgumentError):
        principal_angles(orthonormalize(np.zeros((3, 2))), _random_basis(rng, 3, 1))


def test_orthonormalize_rank_and_idempotence(rng):
    M = rng.normal(size=(6, 2)) @ rng.normal(size=(2, 4))
    basis = orthonormalize(M)
    assert basis.rank == 2
    np.testing.assert_allclose(basis.basis.T @ basis.basis, np.eye(2), atol=1e-12)
    again = orthonormalize(basis.basis)
    np.testing.assert_allclose(again.projector(), basis.projector(), atol=1e-12)
    assert orthonormalize(np.zeros((4, 3))).rank == 0


def test_isolating_projector_on_coordinate_axes():
    jac = _jacobians(np.eye(2))
    H = isolating_projector(jac, Channel("actuator", 0))
    np.testing.assert_allclose(H, np.array([[1.0, 0.0], [0.0, 0.0]]), atol=1e-12)
    reduced = isolating_projector(jac, Channel("actuator", 0), reduced=True)
    assert reduced.shape == (1, 2)
    assert abs(reduced[0, 0]) == pytest.approx(1.0)
    assert reduced[0, 1] == pytest.approx(0.0, abs=1e-12)


def test_isolating_projector_postconditions(rng):
    F = rng.normal(size=(7, 3))
    jac = _jacobians(F, order=6)
    for i in range(3):
        H = isolating_projector(jac, Channel("actuator", i))
        residue = residue_subspace(jac, Channel("actuator", i))
        assert np.max(np.abs(H @ residue.basis)) < 1e-10
        assert np.linalg.matrix_rank(H @ F[:, [i]]) == 1


def test_duplicated_signature_is_not_isolable():
    model = linear_model(
        [[0.0, 1.0], [-1.0, -1.0]], [[0.0, 0.0], [1.0, 1.0]], [[1.0, 0.0]],
        Bf=[[0.0, 0.0], [1.0, 1.0]],
    )
    jac = diffmap_jacobians(model, np.array([0.1, 0.0]), np.array([0.2, 0.2]), 2)
    report = isolability_report(jac, angle_floor=1e-3)
    assert [c.isolable for c in report.channels] == [False, False]
    assert all(c.theta_min_rad < 1e-3 for c in report.channels)
    for i in range(2):
        with pytest.raises(IsolabilityViolationError):
            isolating_projector(jac, Channel("actuator", i))


def test_zero_signature_is_not_isolable():
    report = isolability_report(_jacobians(np.array([[0.0, 1.0], [0.0, 0.0]])))
    assert report.channel("actuator_1").theta_min_rad == 0.0
    assert not report.channel("actuator_1").isolable


def test_unreachable_actuator_is_not_isolable():
    # y = x1, x1' = x2, x2' = u1 + sin x1, x3' = -x3 + u2; actuator 2 never reaches y
    model = SystemModel(
        state_dim=3,
        input_dim=2,
        output_dim=1,
        drift=lambda x: np.array([x[1], np.sin(x[0]), -x[2]]),
        control_matrix=lambda x: np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
        actuator_fault_matrix=lambda x: np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
        output_map=lambda x: x[:1].copy(),
        sensor_fault_dirs=np.zeros((1, 0)),
        actuator_fault_count=2,
    )
    x_star, u_star = np.array([0.3, -0.2, 0.5]), np.array([0.1, 0.4])
    assert relative_degrees(model, x_star) == ([2], 2)
    jac = diffmap_jacobians(model, x_star, u_star, 2)
    assert np.max(np.abs(jac.F_a[:, 1])) <= jac.zero_tolerance

    report = isolability_report(jac)
    unreachable = report.channel("actuator_2")
    assert unreachable.signature_dim == 0
    assert unreachable.theta_min_rad == 0.0
    assert not unreachable.isolable
    reachable = report.channel("actuator_1")
    assert reachable.isolable
    assert reachable.residue_dim == 0
    assert reachable.theta_min_rad == pytest.approx(math.pi / 2)
    with pytest.raises(IsolabilityViolationError):
        isolating_projector(jac, Channel("actuator", 1))


def test_orthonormalize_drops_columns_below_atol():
    M = np.array([[1.0, 0.0], [0.0, 3e-9]])
    assert orthonormalize(M).rank == 2
    assert orthonormalize(M, atol=1e-6).rank == 1
    assert orthonormalize(M[:, 1:], atol=1e-6).rank == 0


def test_single_channel_has_empty_residue():
    report = isolability_report(_jacobians(np.array([[1.0], [2.0]])))
    assert report.channel("actuator_1").theta_min_rad == pytest.approx(math.pi / 2)
    assert report.channel("actuator_1").residue_dim == 0


def test_invalid_channel_rejected():
    jac = _jacobians(np.eye(2))
    with pytest.raises(InvalidArgumentError):
        residue_subspace(jac, Channel("actuator", 5))
    with pytest.raises(InvalidArgumentError):
        Channel("wheel", 0)


def test_linear_differential_map_is_observability_stack():
    A = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [-1.0, -2.0, -3.0]])
    B = np.array([[0.0], [0.0], [1.0]])
    C = np.array([[1.0, 0.5, 0.0]])
    Bf = np.array([[0.0], [1.0], [0.5]])
    model = linear_model(A, B, C, Bf=Bf, E=[[1.0]])
    x, u = np.array([0.3, -0.2, 0.1]), np.array([0.4])
    jac = diffmap_jacobians(model, x, u, 2)
    np.testing.assert_allclose(jac.C_R, np.vstack([C, C @ A, C @ A @ A]), atol=1e-6)
    np.testing.assert_allclose(jac.F_a[:, 0], [0.0, (C @ Bf)[0, 0], (C @ A @ Bf)[0, 0]], atol=1e-6)
    np.testing.assert_allclose(jac.E_s[:, 0], [1.0, 0.0, 0.0])


def test_spacecraft_relative_degree_and_signatures(sc_model, sc_params):
    degrees, order = relative_degrees(sc_model, np.zeros(6))
    assert degrees == [2, 2, 2] and order == 2
    jac = diffmap_jacobians(sc_model, np.zeros(6), np.zeros(4), 2)
    expected = np.linalg.inv(sc_params.inertia) @ sc_params.wheel_config
    np.testing.assert_allclose(jac.F_a[6:], expected, atol=1e-8)
    np.testing.assert_allclose(jac.F_a[:6], 0.0, atol=1e-8)


def test_spacecraft_redundant_wheels_and_isolable_sensors(sc_model):
    jac = diffmap_jacobians(sc_model, np.zeros(6), np.zeros(4), 2)
    report = isolability_report(jac)
    assert not any(c.isolable for c in report.actuator)
    for c in report.sensor:
        assert c.isolable
        assert c.theta_min_rad == pytest.approx(math.pi / 2, abs=1e-9)


def test_missing_relative_degree_raises():
    model = linear_model(np.zeros((2, 2)), [[1.0], [0.0]], [[0.0, 1.0]], Bf=[[1.0], [0.0]])
    with pytest.raises(RelativeDegreeError):
        relative_degrees(model, np.zeros(2), r_max=3)


def test_angle_profile_is_constant_for_lti(rng):
    model = linear_model(
        [[0.0, 1.0], [-2.0, -3.0]], [[0.0], [1.0]], [[1.0, 0.0]], Bf=[[0.0], [1.0]], E=[[1.0]]
    )
    states = rng.normal(size=(6, 2))
    inputs = rng.normal(size=(6, 1))
    profile = angle_profile(model, states, inputs, 2, times=np.arange(6.0))
    assert profile.channels == ["actuator_1", "sensor_1"]
    np.testing.assert_allclose(profile.theta_min, profile.theta_min[0][None, :].repeat(6, axis=0), atol=1e-8)
    frame = profile.to_frame()
    assert list(frame.columns) == ["sample", "time_s", "theta_actuator_1", "theta_sensor_1"]


def test_angle_profile_with_every_sample_skipped():
    model = linear_model(np.zeros((2, 2)), [[1.0], [0.0]], [[0.0, 1.0]], Bf=[[1.0], [0.0]])
    with pytest.raises(InvalidArgumentError):
        angle_profile(model, np.zeros((3, 2)), np.zeros((3, 1)), 2, r_max=2)
