"""
Scenario configuration models
"""
import hashlib
import json
import math
from pathlib import Path
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

PYRAMID_ELEVATION_RAD = math.asin(1.0 / math.sqrt(3.0))


class StrictModel(BaseModel):
    """Base for config blocks: unknown keys are rejected"""
    model_config = ConfigDict(extra="forbid")


def _check_length(values: Optional[List[float]], size: int, name: str):
    if values is not None and len(values) != size:
        raise ValueError(f"{name} must have {size} entries, got {len(values)}")
    return values


class SpacecraftConfig(StrictModel):
    """Spacecraft attitude plant, wheel array and nominal PD controller"""
    inertia_diag_kg_m2: List[float] = Field(default_factory=lambda: [1.0, 1.0, 0.8])
    wheel_inertia_kg_m2: float = Field(0.01, gt=0)
    torque_limit_nm: float = Field(0.14, gt=0)
    pyramid_elevation_rad: float = Field(PYRAMID_ELEVATION_RAD, gt=0, lt=math.pi / 2)
    wheel_config: Optional[List[List[float]]] = None
    kp_diag_nm_per_rad: List[float] = Field(default_factory=lambda: [22.5, 18.0, 15.0])
    kd_diag_nm_s_per_rad: List[float] = Field(default_factory=lambda: [12.0, 9.0, 7.5])
    reference_attitude_rad: List[float] = Field(default_factory=lambda: [0.2, -0.15, 0.1])
    dither_amplitude_rad: List[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0])
    dither_frequency_hz: float = Field(0.0, ge=0)

    @field_validator(
        "inertia_diag_kg_m2", "kp_diag_nm_per_rad", "kd_diag_nm_s_per_rad",
        "reference_attitude_rad", "dither_amplitude_rad",
    )
    @classmethod
    def three_axes(cls, v, info):
        return _check_length(v, 3, info.field_name)

    @field_validator("wheel_config")
    @classmethod
    def wheel_shape(cls, v):
        if v is not None and (len(v) != 3 or any(len(row) != 4 for row in v)):
            raise ValueError("wheel_config must be 3x4")
        return v


class LinearModelConfig(StrictModel):
    """LTI plant x' = Ax + Bu + Bf fa, y = Cx + E fs"""
    a_matrix: List[List[float]]
    b_matrix: List[List[float]]
    c_matrix: List[List[float]]
    actuator_fault_matrix: Optional[List[List[float]]] = None
    sensor_fault_dirs: List[List[float]] = Field(default_factory=list)
    feedback_gain: Optional[List[List[float]]] = None
    input_offset: Optional[List[float]] = None
    input_limit: Optional[float] = Field(None, gt=0)

    @model_validator(mode="after")
    def dimensions(self):
        n = len(self.a_matrix)
        if n == 0 or any(len(row) != n for row in self.a_matrix):
            raise ValueError("a_matrix must be square and nonempty")
        if len(self.b_matrix) != n or len({len(r) for r in self.b_matrix}) != 1:
            raise ValueError("b_matrix must have n rows of equal length")
        m = len(self.b_matrix[0])
        if not self.c_matrix or any(len(row) != n for row in self.c_matrix):
            raise ValueError("c_matrix must have n columns")
        p = len(self.c_matrix)
        if self.actuator_fault_matrix is not None:
            if len(self.actuator_fault_matrix) != n:
                raise ValueError("actuator_fault_matrix must have n rows")
            if any(len(r) > m for r in self.actuator_fault_matrix):
                raise ValueError("actuator fault channels are limited to the input count")
        if any(len(e) != p for e in self.sensor_fault_dirs):
            raise ValueError("sensor_fault_dirs entries must have p components")
        if self.feedback_gain is not None:
            if len(self.feedback_gain) != m or any(len(r) != n for r in self.feedback_gain):
                raise ValueError("feedback_gain must be m x n")
        _check_length(self.input_offset, m, "input_offset")
        return self


class ModelBlock(StrictModel):
    kind: Literal["spacecraft", "linear"] = "spacecraft"
    spacecraft: SpacecraftConfig = Field(default_factory=SpacecraftConfig)
    linear: Optional[LinearModelConfig] = None

    @model_validator(mode="after")
    def linear_present(self):
        if self.kind == "linear" and self.linear is None:
            raise ValueError("model.kind 'linear' requires a model.linear block")
        return self


class ActuatorFaultConfig(StrictModel):
    """Loss of effectiveness on one actuator channel (1-based)"""
    channel: int = Field(..., ge=1)
    effectiveness: float = Field(..., ge=0.0, le=1.0)
    start_s: float = Field(..., ge=0.0)
    end_s: float

    @model_validator(mode="after")
    def window(self):
        if self.end_s <= self.start_s:
            raise ValueError("end_s must be greater than start_s")
        return self


class SensorFaultConfig(StrictModel):
    """Additive sensor fault; waveform phase origin is start_s"""
    channel: int = Field(..., ge=1)
    waveform: Literal["sin", "cos", "bias"] = "sin"
    amplitude_rad: float
    angular_frequency_rad_s: float = Field(0.0, ge=0.0)
    start_s: float = Field(..., ge=0.0)
    end_s: float

    @model_validator(mode="after")
    def window(self):
        if self.end_s <= self.start_s:
            raise ValueError("end_s must be greater than start_s")
        return self


class DisturbanceConfig(StrictModel):
    """Piecewise-constant disturbance added to the state derivative"""
    kind: Literal["none", "uniform"] = "none"
    bound_rad_s2: float = Field(0.0, ge=0.0)
    hold_s: float = Field(0.1, gt=0.0)
    state_indices: Optional[List[int]] = None
    seed: int = 0


class ScenarioBlock(StrictModel):
    name: str = "nominal"
    actuator_faults: List[ActuatorFaultConfig] = Field(default_factory=list)
    sensor_faults: List[SensorFaultConfig] = Field(default_factory=list)
    disturbance: DisturbanceConfig = Field(default_factory=DisturbanceConfig)


class MirrorConfig(StrictModel):
    beta: float = Field(1.0, gt=0.0)
    alpha: float = Field(0.1, ge=0.0)
    eps: float = Field(1e-4, gt=0.0)
    xi_actuator: Optional[List[float]] = None
    xi_sensor: Optional[List[float]] = None
    xi_path: Optional[str] = None

    @field_validator("xi_actuator", "xi_sensor")
    @classmethod
    def positive(cls, v):
        if v is not None and any(x <= 0 for x in v):
            raise ValueError("xi entries must be positive")
        return v


class GainDesignConfig(StrictModel):
    method: Literal["riccati", "poles"] = "riccati"
    poles: Optional[List[float]] = None
    lambda_target_per_s: float = Field(1.0, gt=0.0)
    state_weight: float = Field(1.0, gt=0.0)
    output_weight: float = Field(0.1, gt=0.0)
    metric_q_scale: float = Field(1e-2, gt=0.0)
    verify_samples: int = Field(20, ge=0)

    @model_validator(mode="after")
    def poles_given(self):
        if self.method == "poles" and not self.poles:
            raise ValueError("gain_design.method 'poles' requires gain_design.poles")
        return self


class ObserverBlock(StrictModel):
    kinds: List[Literal["md", "gd"]] = Field(default_factory=lambda: ["md", "gd"])
    gamma_actuator: float = Field(50.0, ge=0.0)
    gamma_sensor: float = Field(50.0, ge=0.0)
    sigma_actuator: float = Field(0.1, ge=0.0)
    sigma_sensor: float = Field(0.1, ge=0.0)
    mirror: MirrorConfig = Field(default_factory=MirrorConfig)
    gain_design: GainDesignConfig = Field(default_factory=GainDesignConfig)
    guard_radius: float = Field(1e3, gt=0.0)
    # "rate": gamma_* are quasi-static adaptation rates in 1/s
    gain_mode: Literal["raw", "rate"] = "raw"
    # null takes the sign from the gain design
    sensitivity_sign: Optional[float] = None
    actuator_features_path: str = "artifacts/features_actuator.json"
    sensor_features_path: str = "artifacts/features_sensor.json"
    weight_init: Literal["trained", "zero"] = "trained"

    @field_validator("sensitivity_sign")
    @classmethod
    def unit_sign(cls, v):
        if v is not None and v not in (-1.0, 1.0):
            raise ValueError("sensitivity_sign must be -1, 1 or null")
        return v

    @field_validator("kinds")
    @classmethod
    def unique(cls, v):
        if not v or len(set(v)) != len(v):
            raise ValueError("observer.kinds must be a nonempty list without duplicates")
        return v


class SimBlock(StrictModel):
    dt_s: float = Field(1e-3, gt=0.0)
    horizon_s: float = Field(60.0, gt=0.0)
    decimation: int = Field(10, ge=1)
    initial_state: Optional[List[float]] = None
    estimate_offset: Optional[List[float]] = None
    u_floor_nm: float = Field(1e-3, gt=0.0)
    out_dir: str = "artifacts"

    @model_validator(mode="after")
    def horizon(self):
        if self.horizon_s <= self.dt_s:
            raise ValueError("horizon_s must exceed dt_s")
        return self


class AnalysisBlock(StrictModel):
    order: Optional[int] = Field(None, ge=1)
    angle_floor_rad: float = Field(1e-3, gt=0.0)
    relative_degree_max: int = Field(4, ge=1)
    samples: int = Field(100, ge=1)
    horizon_s: float = Field(60.0, gt=0.0)
    dt_s: float = Field(1e-2, gt=0.0)
    xi_range: List[float] = Field(default_factory=lambda: [1.0, 5.0])

    @field_validator("xi_range")
    @classmethod
    def ordered(cls, v):
        if len(v) != 2 or not 0 < v[0] < v[1]:
            raise ValueError("xi_range must be [xi_min, xi_max] with 0 < xi_min < xi_max")
        return v


class ArchConfig(StrictModel):
    hidden_widths: List[int] = Field(default_factory=lambda: [32, 32, 32])
    activation: Literal["tanh", "identity", "logistic"] = "tanh"

    @field_validator("hidden_widths")
    @classmethod
    def widths(cls, v):
        if not v or any(w < 1 for w in v):
            raise ValueError("hidden_widths must list at least one positive width")
        return v


class FamilyConfig(StrictModel):
    """Randomized scenario family: templates plus uniform jitter"""
    templates: List[ScenarioBlock] = Field(default_factory=list)
    effectiveness_jitter: float = Field(0.0, ge=0.0)
    window_jitter_s: float = Field(0.0, ge=0.0)
    amplitude_jitter_frac: float = Field(0.0, ge=0.0, lt=1.0)
    frequency_jitter_frac: float = Field(0.0, ge=0.0, lt=1.0)


class TrainingBlock(StrictModel):
    family: FamilyConfig = Field(default_factory=FamilyConfig)
    count: int = Field(8, ge=1)
    dt_s: float = Field(5e-3, gt=0.0)
    horizon_s: float = Field(60.0, gt=0.0)
    sample_period_s: float = Field(0.1, gt=0.0)
    arch: ArchConfig = Field(default_factory=ArchConfig)
    epochs: int = Field(200, ge=1)
    learning_rate: float = Field(1e-3, gt=0.0)
    batch_size: int = Field(64, ge=1)
    refit_last_layer: bool = True


class DetectionBlock(StrictModel):
    actuator_threshold_nm: float = Field(0.01, gt=0.0)
    sensor_threshold_rad: float = Field(0.01, gt=0.0)
    dwell_s: float = Field(1.0, ge=0.0)


class ScenarioConfig(StrictModel):
    """Top-level scenario file"""
    schema_version: Literal[1] = 1
    seed: int = 0
    model: ModelBlock = Field(default_factory=ModelBlock)
    scenario: ScenarioBlock = Field(default_factory=ScenarioBlock)
    observer: ObserverBlock = Field(default_factory=ObserverBlock)
    sim: SimBlock = Field(default_factory=SimBlock)
    analysis: AnalysisBlock = Field(default_factory=AnalysisBlock)
    training: TrainingBlock = Field(default_factory=TrainingBlock)
    detection: DetectionBlock = Field(default_factory=DetectionBlock)

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def scenario_hash(self) -> str:
        """Hash of the plant, fault schedule and time grid only"""
        payload = self.model_dump(mode="json", include={"model", "scenario", "sim"})
        payload["sim"].pop("out_dir", None)
        text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def load_config(path: Union[str, Path]) -> ScenarioConfig:
    """
    Load and validate a scenario config file

    Raises:
        FileNotFoundError: path does not exist
        pydantic.ValidationError: schema violation
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return ScenarioConfig.model_validate_json(path.read_text())
