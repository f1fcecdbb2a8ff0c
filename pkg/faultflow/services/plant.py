"""
Closed-loop plant integration under a fault scenario
"""
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np
from loguru import logger

from faultflow.errors import InvalidArgumentError, NumericalDomainError
from faultflow.services.fault_scenario import FaultScenario
from faultflow.services.system_model import SystemModel, check_vector, eval_dynamics, eval_output
from faultflow.utils.numerics import RK4_STAGE_OFFSETS, rk4_step

Controller = Callable[[float, np.ndarray], np.ndarray]


def zero_controller(input_dim: int) -> Controller:
    u = np.zeros(input_dim)
    return lambda t, x: u


def step_plant(
    model: SystemModel,
    scenario: FaultScenario,
    t: float,
    x: np.ndarray,
    u: np.ndarray,
    dt: float,
) -> Tuple[np.ndarray, List[np.ndarray]]:
    """
    One RK4 step with the input held over the step

    Returns:
        Next state and the four stage states
    """
    disturbed = scenario.disturbance.table is not None

    def rhs(stage, ts, xs):
        d = scenario.disturbance(ts) if disturbed else None
        return eval_dynamics(model, xs, u, scenario.actuator_faults(ts, u), d)

    return rk4_step(rhs, t, x, dt)


def stage_measurements(
    model: SystemModel,
    scenario: FaultScenario,
    t: float,
    dt: float,
    stages: List[np.ndarray],
) -> np.ndarray:
    """Outputs at the RK4 stage states, shape (4, p)"""
    return np.array([
        eval_output(model, s, scenario.sensor_faults(t + c * dt))
        for s, c in zip(stages, RK4_STAGE_OFFSETS)
    ])


@dataclass
class PlantTrajectory:
    """Sampled closed-loop run; inputs are the held commands of each step"""
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    actuator_faults: np.ndarray
    sensor_faults: np.ndarray
    diverged: bool = False
    failure_time_s: Optional[float] = None

    def __len__(self):
        return self.times.shape[0]


def simulate_plant(
    model: SystemModel,
    scenario: FaultScenario,
    controller: Controller,
    x0,
    dt_s: float,
    horizon_s: float,
    sample_every: int = 1,
) -> PlantTrajectory:
    """
    Integrate the plant alone and record every sample_every-th step

    A non-finite state stops the run; the samples recorded so far are
    returned with diverged=True.
    """
    if dt_s <= 0.0 or horizon_s <= dt_s or sample_every < 1:
        raise InvalidArgumentError("need dt_s > 0, horizon_s > dt_s, sample_every >= 1")
    x = check_vector("x0", x0, model.state_dim).copy()
    steps = int(round(horizon_s / dt_s))
    times, states, inputs, fa_log, fs_log = [], [], [], [], []
    diverged, failure_time = False, None

    for k in range(steps + 1):
        t = k * dt_s
        u = np.asarray(controller(t, x), dtype=float)
        if k % sample_every == 0:
            times.append(t)
            states.append(x.copy())
            inputs.append(u.copy())
            fa_log.append(scenario.actuator_faults(t, u))
            fs_log.append(scenario.sensor_faults(t))
        if k == steps:
            break
        try:
            x, _ = step_plant(model, scenario, t, x, u, dt_s)
        except NumericalDomainError:
            x = np.full_like(x, np.nan)
        if not np.all(np.isfinite(x)):
            diverged, failure_time = True, t + dt_s
            logger.warning(f"Plant diverged at t={failure_time:.3f} s in scenario '{scenario.name}'")
            break

    return PlantTrajectory(
        times=np.asarray(times),
        states=np.asarray(states),
        inputs=np.asarray(inputs),
        actuator_faults=np.asarray(fa_log).reshape(len(times), scenario.actuator_count),
        sensor_faults=np.asarray(fs_log).reshape(len(times), scenario.sensor_count),
        diverged=diverged,
        failure_time_s=failure_time,
    )
