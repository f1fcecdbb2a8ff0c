"""
Shared fixtures
"""
import numpy as np
import pytest

from faultflow.services.features import init_feature_map
from faultflow.services.mirror_map import MirrorMapEN
from faultflow.services.observer import ObserverParams, design_metric_and_gain
from faultflow.services.system_model import default_spacecraft_params, linear_model, spacecraft_model


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def sc_params():
    return default_spacecraft_params()


@pytest.fixture
def sc_model(sc_params):
    return spacecraft_model(sc_params)


@pytest.fixture
def double_integrator():
    return linear_model(
        [[0.0, 1.0], [0.0, 0.0]],
        [[0.0], [1.0]],
        [[1.0, 0.0]],
        Bf=[[0.0], [1.0]],
        E=[[1.0]],
        name="double_integrator",
    )


def make_params(
    model,
    kind="md",
    alpha=0.1,
    beta=1.0,
    eps=1e-4,
    xi_a=None,
    xi_s=None,
    gamma=50.0,
    sigma=0.1,
    widths=(6,),
    seed=3,
    design=None,
    guard_radius=1e3,
    sensitivity_sign=None,
):
    """Observer parameters with random untrained features"""
    q_a, p = model.actuator_fault_count, model.output_dim
    input_dim = model.state_dim + model.input_dim
    if design is None:
        design = design_metric_and_gain(model, np.zeros(model.state_dim), np.zeros(model.input_dim), 1.0)
    return ObserverParams(
        kind=kind,
        model=model,
        gain=design.gain,
        metric=design.metric,
        gamma_actuator=np.full(q_a, gamma),
        gamma_sensor=np.full(p, gamma),
        sigma_actuator=sigma,
        sigma_sensor=sigma,
        mirror_actuator=MirrorMapEN(beta, alpha, eps, np.ones(q_a) if xi_a is None else xi_a),
        mirror_sensor=MirrorMapEN(beta, alpha, eps, np.ones(p) if xi_s is None else xi_s),
        actuator_features=init_feature_map(input_dim, widths, seed, output_dim=q_a, kind="actuator"),
        sensor_features=init_feature_map(input_dim, widths, seed + 1, output_dim=p, kind="sensor"),
        guard_radius=guard_radius,
        sensitivity_sign=design.sensitivity_sign if sensitivity_sign is None else sensitivity_sign,
    )


@pytest.fixture
def params_factory():
    return make_params


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long closed-loop runs, deselect with -m 'not slow'")
