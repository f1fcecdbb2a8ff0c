"""
Time-indexed fault schedules and bounded disturbances
"""
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from faultflow.errors import InvalidArgumentError
from faultflow.models.scenario import ScenarioBlock
from faultflow.services.system_model import SystemModel


@dataclass(frozen=True)
class EffectivenessWindow:
    """Actuator channel runs at effectiveness eta on [start_s, end_s)"""
    channel: int
    effectiveness: float
    start_s: float
    end_s: float

    def active(self, t: float) -> bool:
        return self.start_s <= t < self.end_s


@dataclass(frozen=True)
class SensorWindow:
    """Additive sensor fault signal on [start_s, end_s)"""
    channel: int
    waveform: str
    amplitude: float
    angular_frequency: float
    start_s: float
    end_s: float

    def active(self, t: float) -> bool:
        return self.start_s <= t < self.end_s

    def value(self, t: float) -> float:
        if not self.active(t):
            return 0.0
        phase = self.angular_frequency * (t - self.start_s)
        if self.waveform == "sin":
            return self.amplitude * math.sin(phase)
        if self.waveform == "cos":
            return self.amplitude * math.cos(phase)
        return self.amplitude


@dataclass(frozen=True)
class Disturbance:
    """Piecewise-constant bounded disturbance, ||d(t)|| < bound"""
    state_dim: int
    bound: float = 0.0
    hold_s: float = 0.1
    table: Optional[np.ndarray] = None

    def __call__(self, t: float) -> np.ndarray:
        if self.table is None:
            return np.zeros(self.state_dim)
        k = min(int(t // self.hold_s), self.table.shape[0] - 1)
        return self.table[max(k, 0)]

    @classmethod
    def uniform(cls, state_dim, bound, hold_s, horizon_s, seed, state_indices=None):
        indices = list(range(state_dim)) if state_indices is None else list(state_indices)
        if any(i < 0 or i >= state_dim for i in indices):
            raise InvalidArgumentError(f"disturbance state_indices out of range: {indices}")
        buckets = int(math.ceil(horizon_s / hold_s)) + 1
        rng = np.random.default_rng(seed)
        directions = rng.standard_normal((buckets, len(indices)))
        directions /= np.maximum(np.linalg.norm(directions, axis=1, keepdims=True), 1e-300)
        magnitudes = bound * rng.uniform(0.0, 1.0, buckets)
        table = np.zeros((buckets, state_dim))
        table[:, indices] = directions * magnitudes[:, None]
        table.setflags(write=False)
        return cls(state_dim=state_dim, bound=bound, hold_s=hold_s, table=table)


@dataclass(frozen=True)
class FaultScenario:
    """
    Fault schedule for one run

    Actuator faults are loss of effectiveness on the commanded input,
    fa_i = (eta_i - 1) u_i; sensor faults are additive signals. All
    profiles vanish outside their windows.
    """
    actuator_count: int
    sensor_count: int
    horizon_s: float
    actuator_windows: Tuple[EffectivenessWindow, ...] = ()
    sensor_windows: Tuple[SensorWindow, ...] = ()
    disturbance: Disturbance = field(default_factory=lambda: Disturbance(state_dim=0))
    name: str = "nominal"

    def effectiveness(self, t: float) -> np.ndarray:
        eta = np.ones(self.actuator_count)
        for w in self.actuator_windows:
            if w.active(t):
                eta[w.channel] *= w.effectiveness
        return eta

    def actuator_faults(self, t: float, u: np.ndarray) -> np.ndarray:
        return (self.effectiveness(t) - 1.0) * u[: self.actuator_count]

    def actuator_active(self, t: float) -> np.ndarray:
        mask = np.zeros(self.actuator_count, dtype=bool)
        for w in self.actuator_windows:
            mask[w.channel] |= w.active(t)
        return mask

    def sensor_faults(self, t: float) -> np.ndarray:
        fs = np.zeros(self.sensor_count)
        for w in self.sensor_windows:
            fs[w.channel] += w.value(t)
        return fs

    def sensor_active(self, t: float) -> np.ndarray:
        mask = np.zeros(self.sensor_count, dtype=bool)
        for w in self.sensor_windows:
            mask[w.channel] |= w.active(t)
        return mask


def build_scenario(block: ScenarioBlock, model: SystemModel, horizon_s: float) -> FaultScenario:
    """
    Turn a scenario config block into a runtime schedule

    Raises:
        InvalidArgumentError: channel outside the model's fault channels
    """
    q_a, q_s = model.actuator_fault_count, model.sensor_fault_count
    if q_a > model.input_dim:
        raise InvalidArgumentError("loss-of-effectiveness faults need one input per actuator channel")
    actuator = []
    for f in block.actuator_faults:
        if f.channel > q_a:
            raise InvalidArgumentError(f"actuator channel {f.channel} exceeds {q_a} channels")
        actuator.append(EffectivenessWindow(f.channel - 1, f.effectiveness, f.start_s, f.end_s))
    sensor = []
    for f in block.sensor_faults:
        if f.channel > q_s:
            raise InvalidArgumentError(f"sensor channel {f.channel} exceeds {q_s} channels")
        sensor.append(SensorWindow(
            f.channel - 1, f.waveform, f.amplitude_rad,
            f.angular_frequency_rad_s, f.start_s, f.end_s,
        ))
    dist = block.disturbance
    if dist.kind == "uniform" and dist.bound_rad_s2 > 0.0:
        disturbance = Disturbance.uniform(
            model.state_dim, dist.bound_rad_s2, dist.hold_s, horizon_s, dist.seed, dist.state_indices
        )
    else:
        disturbance = Disturbance(state_dim=model.state_dim)
    return FaultScenario(
        actuator_count=q_a,
        sensor_count=q_s,
        horizon_s=horizon_s,
        actuator_windows=tuple(actuator),
        sensor_windows=tuple(sensor),
        disturbance=disturbance,
        name=block.name,
    )


def healthy_scenario(model: SystemModel, horizon_s: float) -> FaultScenario:
    return build_scenario(ScenarioBlock(name="healthy"), model, horizon_s)
