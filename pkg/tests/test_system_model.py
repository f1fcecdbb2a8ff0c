import math

import numpy as np
import pytest

from faultflow.errors import InvalidArgumentError, NumericalDomainError
from faultflow.services.fault_scenario import healthy_scenario
from faultflow.services.plant import simulate_plant, zero_controller
from faultflow.services.system_model import (
    ReferenceTrajectory, SpacecraftParams, angular_momentum, body_torque_command, eval_dynamics, linear_model,
    eval_output, linearize, nominal_controller, pyramid_wheel_config, spacecraft_model,
    wheel_momentum_vector,
)
from faultflow.utils.numerics import central_jacobian


def test_pyramid_columns_are_unit_and_span_three_axes():
    wheels = pyramid_wheel_config()
    np.testing.assert_allclose(np.linalg.norm(wheels, axis=0), 1.0)
    np.testing.assert_allclose(wheels[2], 1.0 / math.sqrt(3.0))
    assert np.linalg.matrix_rank(wheels) == 3


def test_eval_dynamics_rejects_bad_shapes(sc_model):
    with pytest.raises(InvalidArgumentError):
        eval_dynamics(sc_model, np.zeros(5), np.zeros(4))
    with pytest.raises(InvalidArgumentError):
        eval_dynamics(sc_model, np.zeros(6), np.zeros(3))


def test_eval_dynamics_non_finite_raises(sc_model):
    with pytest.raises(NumericalDomainError):
        eval_dynamics(sc_model, np.zeros(6), np.array([np.nan, 0.0, 0.0, 0.0]))


def test_actuator_fault_enters_like_the_input(sc_model):
    x = np.array([0.1, -0.2, 0.05, 0.3, -0.1, 0.2])
    u = np.array([0.05, -0.02, 0.1, 0.0])
    fa = np.array([0.0, -0.01, 0.03, 0.0])
    np.testing.assert_allclose(
        eval_dynamics(sc_model, x, u, fa), eval_dynamics(sc_model, x, u + fa), atol=1e-15
    )
    np.testing.assert_array_equal(sc_model.actuator_fault_field(2)(x), sc_model.control_field(2)(x))


def test_sensor_fault_is_additive(sc_model):
    x = np.arange(6, dtype=float)
    fs = np.array([0.01, -0.02, 0.0])
    np.testing.assert_allclose(eval_output(sc_model, x, fs), x[:3] + fs)


def test_analytic_drift_jacobian_matches_finite_difference(sc_model, rng):
    for _ in range(5):
        x = rng.normal(size=6)
        np.testing.assert_allclose(
            sc_model.drift_jacobian_at(x), central_jacobian(sc_model.drift, x), atol=1e-7
        )


def test_linearize_at_rest_is_double_integrator(sc_model):
    A, C = linearize(sc_model, np.zeros(6), np.zeros(4))
    expected = np.zeros((6, 6))
    expected[:3, 3:] = np.eye(3)
    np.testing.assert_allclose(A, expected)
    np.testing.assert_allclose(C, np.hstack([np.eye(3), np.zeros((3, 3))]))


def test_singular_inertia_rejected():
    with pytest.raises(InvalidArgumentError):
        SpacecraftParams(np.diag([1.0, 0.0, 1.0]), 0.01, 0.14, pyramid_wheel_config(), np.eye(3), np.eye(3))


def test_nominal_controller_saturates(sc_params):
    x = np.array([5.0, -5.0, 5.0, 0.0, 0.0, 0.0])
    u = nominal_controller(sc_params, x, np.zeros(6))
    assert np.all(np.abs(u) <= sc_params.torque_limit)
    assert np.isclose(np.max(np.abs(u)), sc_params.torque_limit)


def test_allocation_reproduces_unsaturated_torque(sc_params):
    x = np.array([0.001, -0.0005, 0.0002, 0.0, 0.0, 0.0])
    tau = body_torque_command(sc_params, x, np.zeros(6))
    u = nominal_controller(sc_params, x, np.zeros(6))
    np.testing.assert_allclose(sc_params.wheel_config @ u, tau, atol=1e-12)


def test_reference_dither_velocity_is_attitude_derivative():
    ref = ReferenceTrajectory(np.array([0.2, -0.15, 0.1]), np.array([0.05, 0.05, 0.05]), 0.1)
    t, h = 3.0, 1e-6
    numeric = (ref.state(t + h)[:3] - ref.state(t - h)[:3]) / (2 * h)
    np.testing.assert_allclose(ref.state(t)[3:], numeric, atol=1e-8)


def test_wheel_momentum_vector(sc_params):
    speeds = np.array([10.0, 0.0, -10.0, 0.0])
    expected = sc_params.wheel_inertia * 10.0 * (sc_params.wheel_config[:, 0] - sc_params.wheel_config[:, 2])
    np.testing.assert_allclose(wheel_momentum_vector(sc_params, speeds), expected)


def test_torque_free_motion_conserves_momentum_magnitude_and_energy(sc_params, sc_model):
    x0 = np.array([0.0, 0.0, 0.0, 0.1, -0.05, 0.2])
    traj = simulate_plant(sc_model, healthy_scenario(sc_model, 10.0), zero_controller(4), x0, 1e-3, 10.0, 100)
    momentum = np.array([np.linalg.norm(angular_momentum(sc_params, x)) for x in traj.states])
    energy = np.array([0.5 * x[3:] @ sc_params.inertia @ x[3:] for x in traj.states])
    assert np.max(np.abs(momentum - momentum[0])) < 1e-8
    assert np.max(np.abs(energy - energy[0])) < 1e-8


@pytest.mark.slow
def test_zero_input_conserves_momentum_over_a_minute(sc_params, sc_model):
    x0 = np.array([0.1, -0.2, 0.05, 0.05, 0.12, -0.08])
    traj = simulate_plant(sc_model, healthy_scenario(sc_model, 60.0), zero_controller(4), x0, 1e-3, 60.0, 1000)
    assert traj.times[-1] == pytest.approx(60.0)
    momentum = np.array([np.linalg.norm(sc_params.inertia @ x[3:]) for x in traj.states])
    energy = np.array([0.5 * x[3:] @ sc_params.inertia @ x[3:] for x in traj.states])
    assert np.max(np.abs(momentum - momentum[0])) < 1e-8
    assert np.max(np.abs(energy - energy[0])) < 1e-8


def test_rk4_converges_at_fourth_order():
    params = SpacecraftParams(
        np.diag([1.0, 2.0, 3.0]), 0.01, 0.14, pyramid_wheel_config(), np.eye(3), np.eye(3)
    )
    model = spacecraft_model(params)
    x0 = np.array([0.0, 0.0, 0.0, 1.0, 2.0, -1.5])
    horizon = 2.0
    scenario = healthy_scenario(model, horizon)

    def final_state(dt):
        return simulate_plant(model, scenario, zero_controller(4), x0, dt, horizon).states[-1]

    reference = final_state(2.5e-4)
    steps = np.array([4e-3, 2e-3, 1e-3])
    errors = np.array([np.linalg.norm(final_state(dt) - reference) for dt in steps])
    slope = np.polyfit(np.log(steps), np.log(errors), 1)[0]
    assert 3.7 <= slope <= 4.3


def test_dynamics_and_output_are_affine_in_inputs_and_faults(sc_model, rng):
    x = rng.normal(scale=0.3, size=6)
    u1, u2 = rng.normal(scale=0.1, size=4), rng.normal(scale=0.1, size=4)
    f1, f2 = rng.normal(scale=0.05, size=4), rng.normal(scale=0.05, size=4)
    s1, s2 = rng.normal(scale=0.01, size=3), rng.normal(scale=0.01, size=3)
    for a in (-1.5, 0.3, 2.0):
        np.testing.assert_allclose(
            eval_dynamics(sc_model, x, a * u1 + (1 - a) * u2, f1),
            a * eval_dynamics(sc_model, x, u1, f1) + (1 - a) * eval_dynamics(sc_model, x, u2, f1),
            atol=1e-12,
        )
        np.testing.assert_allclose(
            eval_dynamics(sc_model, x, u1, a * f1 + (1 - a) * f2),
            a * eval_dynamics(sc_model, x, u1, f1) + (1 - a) * eval_dynamics(sc_model, x, u1, f2),
            atol=1e-12,
        )
        np.testing.assert_allclose(
            eval_output(sc_model, x, a * s1 + (1 - a) * s2),
            a * eval_output(sc_model, x, s1) + (1 - a) * eval_output(sc_model, x, s2),
            atol=1e-15,
        )


def test_fault_vectors_must_match_channel_counts():
    model = linear_model([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]], [[1.0, 0.0]])
    assert model.actuator_fault_count == 0 and model.sensor_fault_count == 0
    np.testing.assert_array_equal(eval_dynamics(model, [0.0, 1.0], [0.5], np.zeros(0)), [1.0, 0.5])
    with pytest.raises(InvalidArgumentError):
        eval_dynamics(model, [0.0, 1.0], [0.5], [0.1])
    with pytest.raises(InvalidArgumentError):
        eval_output(model, [0.0, 1.0], [0.1])


def test_controller_is_silent_at_the_reference(sc_params):
    x_ref = np.array([0.2, -0.15, 0.1, 0.01, 0.0, -0.02])
    np.testing.assert_array_equal(nominal_controller(sc_params, x_ref, x_ref), np.zeros(4))


def test_roll_error_torque(sc_params):
    x = np.array([0.1, 0.0, 0.0, 0.0, 0.0, 0.0])
    np.testing.assert_allclose(body_torque_command(sc_params, x, np.zeros(6)), [-2.25, 0.0, 0.0])
    u = nominal_controller(sc_params, x, np.zeros(6))
    # roll maps onto wheels 1 and 3 only, both saturated
    np.testing.assert_allclose(u, [-sc_params.torque_limit, 0.0, sc_params.torque_limit, 0.0], atol=1e-12)
