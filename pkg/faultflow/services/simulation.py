"""
Lockstep co-simulation of the plant and one or more observers
"""
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from loguru import logger

from faultflow.config import U_FLOOR_NM
from faultflow.errors import InvalidArgumentError, NumericalDomainError, ObserverDivergedError
from faultflow.models.report import Provenance
from faultflow.models.scenario import SimBlock
from faultflow.services.fault_scenario import FaultScenario
from faultflow.services.observer import ObserverParams, ObserverState, advance, observer_signals
from faultflow.services.plant import Controller, stage_measurements, step_plant
from faultflow.services.system_model import SystemModel, check_vector, eval_output


@dataclass(frozen=True)
class SimConfig:
    dt_s: float = 1e-3
    horizon_s: float = 60.0
    decimation: int = 1
    initial_state: Optional[np.ndarray] = None
    u_floor: float = U_FLOOR_NM

    def __post_init__(self):
        if self.dt_s <= 0.0:
            raise InvalidArgumentError("dt_s must be positive")
        if self.horizon_s <= self.dt_s:
            raise InvalidArgumentError("horizon_s must exceed dt_s")
        if self.decimation < 1:
            raise InvalidArgumentError("decimation must be >= 1")
        if self.u_floor <= 0.0:
            raise InvalidArgumentError("u_floor must be positive")

    @property
    def steps(self) -> int:
        return int(round(self.horizon_s / self.dt_s))

    @classmethod
    def from_block(cls, block: SimBlock) -> "SimConfig":
        return cls(
            dt_s=block.dt_s,
            horizon_s=block.horizon_s,
            decimation=block.decimation,
            initial_state=None if block.initial_state is None else np.asarray(block.initial_state, float),
            u_floor=block.u_floor_nm,
        )


@dataclass
class ObserverTrace:
    """Per-observer telemetry on the shared time grid"""
    name: str
    x_hat: np.ndarray
    residual: np.ndarray
    fa_hat: np.ndarray
    eta_hat: np.ndarray
    fs_hat: np.ndarray
    e_out: np.ndarray
    W_a: Optional[np.ndarray] = None
    W_s: Optional[np.ndarray] = None
    V: Optional[np.ndarray] = None
    guard_hits: int = 0
    params: Optional[ObserverParams] = field(default=None, repr=False)


@dataclass
class SimTrace:
    """Decimated run record; fs_true and fs_active are in output space"""
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    fa_true: np.ndarray
    eta_true: np.ndarray
    fa_active: np.ndarray
    fs_true: np.ndarray
    fs_active: np.ndarray
    observers: Dict[str, ObserverTrace] = field(default_factory=dict)
    failed: bool = False
    failure_time_s: Optional[float] = None
    failure_reason: Optional[str] = None
    scenario_name: str = "nominal"
    provenance: Provenance = field(default_factory=Provenance)

    def __len__(self):
        return self.times.shape[0]

    @property
    def dt_s(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self) > 1 else 0.0

    def to_frame(self, name: str) -> pd.DataFrame:
        """Flat table of the true signals and one observer's estimates"""
        obs = self.observers[name]
        columns = {"time_s": self.times}
        blocks = [
            ("x", self.states), ("u", self.inputs),
            ("fa_true", self.fa_true), ("eta_true", self.eta_true), ("fa_active", self.fa_active.astype(int)),
            ("fs_true", self.fs_true), ("fs_active", self.fs_active.astype(int)),
            ("xhat", obs.x_hat), ("r", obs.residual), ("fa_hat", obs.fa_hat),
            ("eta_hat", obs.eta_hat), ("fs_hat", obs.fs_hat), ("e_out", obs.e_out),
        ]
        for prefix, block in blocks:
            for i in range(block.shape[1]):
                columns[f"{prefix}_{i + 1}"] = block[:, i]
        columns["V"] = obs.V if obs.V is not None else np.full(len(self), np.nan)
        return pd.DataFrame(columns)


def _block(frame: pd.DataFrame, prefix: str) -> np.ndarray:
    cols = [c for c in frame.columns if re.fullmatch(rf"{prefix}_\d+", c)]
    cols.sort(key=lambda c: int(c.rsplit("_", 1)[1]))
    return frame[cols].to_numpy(dtype=float) if cols else np.zeros((len(frame), 0))


def frame_to_trace(frame: pd.DataFrame, name: str, provenance: Optional[Provenance] = None, failed: bool = False) -> SimTrace:
    """Rebuild a single-observer trace from its CSV table"""
    if "time_s" not in frame.columns:
        raise InvalidArgumentError("trace table has no time_s column")
    V = frame["V"].to_numpy(dtype=float) if "V" in frame.columns else None
    obs = ObserverTrace(
        name=name,
        x_hat=_block(frame, "xhat"),
        residual=_block(frame, "r"),
        fa_hat=_block(frame, "fa_hat"),
        eta_hat=_block(frame, "eta_hat"),
        fs_hat=_block(frame, "fs_hat"),
        e_out=_block(frame, "e_out"),
        V=None if V is None or np.all(np.isnan(V)) else V,
    )
    return SimTrace(
        times=frame["time_s"].to_numpy(dtype=float),
        states=_block(frame, "x"),
        inputs=_block(frame, "u"),
        fa_true=_block(frame, "fa_true"),
        eta_true=_block(frame, "eta_true"),
        fa_active=_block(frame, "fa_active").astype(bool),
        fs_true=_block(frame, "fs_true"),
        fs_active=_block(frame, "fs_active").astype(bool),
        observers={name: obs},
        failed=failed,
        provenance=provenance or Provenance(),
    )


class _Recorder:
    def __init__(self, model: SystemModel, names: Sequence[str], u_floor: float):
        self.model = model
        self.u_floor = u_floor
        self.rows: Dict[str, List[np.ndarray]] = {}
        self.obs_rows = {name: {} for name in names}
        self.eta_hold = {name: np.ones(model.actuator_fault_count) for name in names}
        self.guard_hits = {name: 0 for name in names}

    def _push(self, store, key, value):
        store.setdefault(key, []).append(np.array(value, dtype=float))

    def record(self, t, x, u, scenario: FaultScenario, observers: Sequence[ObserverState]):
        model = self.model
        fs = scenario.sensor_faults(t)
        y = eval_output(model, x, fs)
        dirs = model.sensor_fault_dirs
        self._push(self.rows, "times", t)
        self._push(self.rows, "states", x)
        self._push(self.rows, "inputs", u)
        self._push(self.rows, "fa_true", scenario.actuator_faults(t, u))
        self._push(self.rows, "eta_true", scenario.effectiveness(t))
        self._push(self.rows, "fa_active", scenario.actuator_active(t))
        self._push(self.rows, "fs_true", dirs @ fs)
        self._push(self.rows, "fs_active", (np.abs(dirs) @ scenario.sensor_active(t)) > 0)
        h_true = model.output_map(x)
        for state in observers:
            name = state.params.kind
            sig, _, _ = observer_signals(state.params, state.x_hat, state.W_a, state.W_s, y, u)
            q_a = model.actuator_fault_count
            valid = np.abs(u[:q_a]) > self.u_floor
            eta = self.eta_hold[name]
            eta[valid] = 1.0 + sig.fa_hat[valid] / u[:q_a][valid]
            store = self.obs_rows[name]
            self._push(store, "x_hat", state.x_hat)
            self._push(store, "residual", sig.residual)
            self._push(store, "fa_hat", sig.fa_hat)
            self._push(store, "eta_hat", eta)
            self._push(store, "fs_hat", sig.fs_hat)
            self._push(store, "e_out", h_true - model.output_map(state.x_hat))
            self._push(store, "W_a", state.W_a)
            self._push(store, "W_s", state.W_s)
            self.guard_hits[name] = state.guard_hits

    def trace(self, observers: Sequence[ObserverState], scenario: FaultScenario) -> SimTrace:
        arrays = {k: np.asarray(v) for k, v in self.rows.items()}
        obs_traces = {}
        for state in observers:
            name = state.params.kind
            store = {k: np.asarray(v) for k, v in self.obs_rows[name].items()}
            obs_traces[name] = ObserverTrace(name=name, guard_hits=self.guard_hits[name], params=state.params, **store)
        return SimTrace(
            times=arrays["times"],
            states=arrays["states"],
            inputs=arrays["inputs"],
            fa_true=arrays["fa_true"],
            eta_true=arrays["eta_true"],
            fa_active=arrays["fa_active"].astype(bool),
            fs_true=arrays["fs_true"],
            fs_active=arrays["fs_active"].astype(bool),
            observers=obs_traces,
            scenario_name=scenario.name,
        )


def run_scenario(
    model: SystemModel,
    scenario: FaultScenario,
    observers: Sequence[ObserverState],
    config: SimConfig,
    controller: Controller,
) -> SimTrace:
    """
    Integrate plant and observers over the horizon

    The plant input is held over each step and the observers receive the
    measurements at the plant's RK4 stages, so an exactly initialised
    observer stays on the fault-free trajectory. A divergence ends the run
    and returns the samples recorded so far with failed=True.
    """
    names = [s.params.kind for s in observers]
    if len(set(names)) != len(names):
        raise InvalidArgumentError("observer kinds must be unique within a run")
    x = np.zeros(model.state_dim) if config.initial_state is None else config.initial_state
    x = check_vector("initial_state", x, model.state_dim).copy()
    states = list(observers)
    recorder = _Recorder(model, names, config.u_floor)
    dt = config.dt_s
    failure = None

    logger.info(f"Running scenario '{scenario.name}' for {config.horizon_s} s with observers {names}")
    for k in range(config.steps + 1):
        t = k * dt
        u = np.asarray(controller(t, x), dtype=float)
        if k % config.decimation == 0:
            recorder.record(t, x, u, scenario, states)
        if k == config.steps:
            break
        try:
            x_next, stages = step_plant(model, scenario, t, x, u, dt)
        except NumericalDomainError as e:
            failure = (t + dt, f"plant: {e}")
            break
        if not np.all(np.isfinite(x_next)):
            failure = (t + dt, "plant: non-finite state")
            break
        y_stages = stage_measurements(model, scenario, t, dt, stages)
        try:
            states = [advance(s, y_stages, u, dt)[0] for s in states]
        except ObserverDivergedError as e:
            failure = (e.time_s, f"observer: {e}")
            break
        x = x_next

    trace = recorder.trace(states, scenario)
    if failure is not None:
        trace.failed, trace.failure_time_s, trace.failure_reason = True, failure[0], failure[1]
        logger.error(f"Scenario '{scenario.name}' failed at t={failure[0]:.4f} s: {failure[1]}")
    else:
        logger.info(f"Scenario '{scenario.name}' finished with {len(trace)} samples")
    return trace
