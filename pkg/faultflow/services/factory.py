"""
Build runtime objects from a validated scenario config
"""
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from loguru import logger

from faultflow.errors import InvalidArgumentError
from faultflow.models.report import XiSuggestion
from faultflow.models.scenario import ScenarioConfig
from faultflow.services.fault_scenario import FaultScenario, build_scenario, healthy_scenario
from faultflow.services.features import FeatureMap, load_feature_map
from faultflow.services.mirror_map import MirrorMapEN
from faultflow.services.observer import (
    MetricDesign, ObserverParams, ObserverState, design_metric_and_gain, initial_observer_state, rate_gains,
)
from faultflow.services.plant import Controller, simulate_plant
from faultflow.services.system_model import (
    ReferenceTrajectory, SpacecraftParams, SystemModel, linear_controller, linear_model,
    pyramid_wheel_config, spacecraft_controller, spacecraft_model,
)


@dataclass(frozen=True)
class Plant:
    """Model, closed-loop policy and operating point of one config"""
    model: SystemModel
    controller: Controller
    x0: np.ndarray
    x_op: np.ndarray
    u_op: np.ndarray
    spacecraft: Optional[SpacecraftParams] = None


def build_plant(config: ScenarioConfig) -> Plant:
    block = config.model
    if block.kind == "spacecraft":
        sc = block.spacecraft
        wheels = np.array(sc.wheel_config) if sc.wheel_config is not None else pyramid_wheel_config(sc.pyramid_elevation_rad)
        params = SpacecraftParams(
            inertia=np.diag(sc.inertia_diag_kg_m2),
            wheel_inertia=sc.wheel_inertia_kg_m2,
            torque_limit=sc.torque_limit_nm,
            wheel_config=wheels,
            kp=np.diag(sc.kp_diag_nm_per_rad),
            kd=np.diag(sc.kd_diag_nm_s_per_rad),
        )
        model = spacecraft_model(params)
        reference = ReferenceTrajectory(
            attitude=np.array(sc.reference_attitude_rad),
            dither_amplitude=np.array(sc.dither_amplitude_rad),
            dither_frequency_hz=sc.dither_frequency_hz,
        )
        controller = spacecraft_controller(params, reference)
        x_op = np.concatenate([reference.attitude, np.zeros(3)])
    else:
        lin = block.linear
        model = linear_model(lin.a_matrix, lin.b_matrix, lin.c_matrix,
                             lin.actuator_fault_matrix,
                             np.array(lin.sensor_fault_dirs).T if lin.sensor_fault_dirs else None)
        controller = linear_controller(lin.feedback_gain, lin.input_offset, lin.input_limit, input_dim=model.input_dim)
        params = None
        x_op = np.zeros(model.state_dim)

    x0 = np.zeros(model.state_dim) if config.sim.initial_state is None else np.array(config.sim.initial_state, float)
    if x0.shape != (model.state_dim,):
        raise InvalidArgumentError(f"sim.initial_state must have {model.state_dim} entries")
    u_op = np.asarray(controller(0.0, x_op), dtype=float)
    return Plant(model, controller, x0, x_op, u_op, params)


def build_fault_scenario(config: ScenarioConfig, plant: Plant, horizon_s: Optional[float] = None) -> FaultScenario:
    return build_scenario(config.scenario, plant.model, horizon_s or config.sim.horizon_s)


def verification_samples(config: ScenarioConfig, plant: Plant, count: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """States and inputs spread along the healthy closed-loop trajectory"""
    if count == 0:
        return []
    dt = config.analysis.dt_s
    traj = simulate_plant(plant.model, healthy_scenario(plant.model, config.sim.horizon_s),
                          plant.controller, plant.x0, dt, config.sim.horizon_s)
    picks = np.unique(np.linspace(0, len(traj) - 1, count).round().astype(int))
    return [(traj.states[k], traj.inputs[k]) for k in picks]


def design_observer_gain(config: ScenarioConfig, plant: Plant) -> MetricDesign:
    gd = config.observer.gain_design
    return design_metric_and_gain(
        plant.model,
        plant.x_op,
        plant.u_op,
        lambda_target=gd.lambda_target_per_s,
        poles=gd.poles if gd.method == "poles" else None,
        state_weight=gd.state_weight,
        output_weight=gd.output_weight,
        q_scale=gd.metric_q_scale,
        samples=verification_samples(config, plant, gd.verify_samples),
    )


def resolve_xi(config: ScenarioConfig, plant: Plant) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-channel curvature: explicit lists win, then a saved suggestion file,
    then xi = 1 everywhere
    """
    mirror = config.observer.mirror
    q_a, p = plant.model.actuator_fault_count, plant.model.output_dim
    xi_a, xi_s = np.ones(q_a), np.ones(p)
    if mirror.xi_path:
        path = Path(mirror.xi_path)
        if not path.is_file():
            raise FileNotFoundError(f"xi file not found: {path}")
        suggestion = XiSuggestion.model_validate_json(path.read_text())
        xi_a, xi_s = np.array(suggestion.xi_actuator), np.array(suggestion.xi_sensor)
        logger.info(f"Loaded curvature from {path}")
    if mirror.xi_actuator is not None:
        xi_a = np.array(mirror.xi_actuator)
    if mirror.xi_sensor is not None:
        xi_s = np.array(mirror.xi_sensor)
    if xi_a.shape != (q_a,) or xi_s.shape != (p,):
        raise InvalidArgumentError(f"xi needs {q_a} actuator and {p} sensor entries")
    return xi_a, xi_s


def load_features(config: ScenarioConfig) -> Tuple[FeatureMap, FeatureMap]:
    return (load_feature_map(config.observer.actuator_features_path),
            load_feature_map(config.observer.sensor_features_path))


def build_observers(
    config: ScenarioConfig,
    plant: Plant,
    design: MetricDesign,
    actuator_features: FeatureMap,
    sensor_features: FeatureMap,
) -> List[ObserverState]:
    """One initial observer state per configured kind"""
    block = config.observer
    xi_a, xi_s = resolve_xi(config, plant)
    m = block.mirror
    x_hat0 = plant.x0.copy()
    if config.sim.estimate_offset is not None:
        offset = np.array(config.sim.estimate_offset, float)
        if offset.shape != x_hat0.shape:
            raise InvalidArgumentError(f"sim.estimate_offset must have {x_hat0.size} entries")
        x_hat0 = x_hat0 + offset

    q_a, p = plant.model.actuator_fault_count, plant.model.output_dim
    if block.gain_mode == "rate":
        points = [(plant.x_op, plant.u_op)] + verification_samples(config, plant, block.gain_design.verify_samples)
        gamma_a, gamma_s = rate_gains(design, actuator_features, sensor_features, points,
                                      block.gamma_actuator, block.gamma_sensor)
    else:
        gamma_a, gamma_s = np.full(q_a, block.gamma_actuator), np.full(p, block.gamma_sensor)
    sign = design.sensitivity_sign if block.sensitivity_sign is None else block.sensitivity_sign

    states = []
    for kind in block.kinds:
        params = ObserverParams(
            kind=kind,
            model=plant.model,
            gain=design.gain,
            metric=design.metric,
            gamma_actuator=gamma_a,
            gamma_sensor=gamma_s,
            sigma_actuator=block.sigma_actuator,
            sigma_sensor=block.sigma_sensor,
            mirror_actuator=MirrorMapEN(m.beta, m.alpha, m.eps, xi_a),
            mirror_sensor=MirrorMapEN(m.beta, m.alpha, m.eps, xi_s),
            actuator_features=actuator_features,
            sensor_features=sensor_features,
            guard_radius=block.guard_radius,
            sensitivity_sign=sign,
        )
        states.append(initial_observer_state(params, x_hat0, block.weight_init))
    return states
