"""
Analysis, training, simulation and comparison reports
"""
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field


class Provenance(BaseModel):
    """Embedded in every artifact"""
    config_hash: Optional[str] = None
    scenario_hash: Optional[str] = None
    seed: Optional[int] = None


class ChannelAngles(BaseModel):
    """Principal angles of one fault channel against its residue subspace"""
    channel: str
    kind: Literal["actuator", "sensor"]
    index: int
    theta_min_rad: float = Field(..., ge=0.0)
    angles_rad: List[float] = Field(default_factory=list)
    isolable: bool
    signature_dim: int
    residue_dim: int
    nominal_angle_rad: Optional[float] = None


class IsolabilityReport(BaseModel):
    """Pointwise isolability verdicts at one evaluation point"""
    order: int
    eval_state: List[float]
    eval_input: List[float]
    angle_floor_rad: float
    channels: List[ChannelAngles]

    @property
    def actuator(self) -> List[ChannelAngles]:
        return [c for c in self.channels if c.kind == "actuator"]

    @property
    def sensor(self) -> List[ChannelAngles]:
        return [c for c in self.channels if c.kind == "sensor"]

    def channel(self, label: str) -> ChannelAngles:
        for c in self.channels:
            if c.channel == label:
                return c
        raise KeyError(label)


class XiSuggestion(BaseModel):
    """Per-channel mirror-map curvature designed from angle lower bounds"""
    xi_range: List[float]
    theta_lower_bounds_rad: Dict[str, float]
    xi_actuator: List[float]
    xi_sensor: List[float]
    provenance: Provenance = Field(default_factory=Provenance)


class AnalysisReport(BaseModel):
    report: IsolabilityReport
    samples_used: int
    samples_skipped: List[int] = Field(default_factory=list)
    theta_lower_bounds_rad: Dict[str, float]
    xi: XiSuggestion
    provenance: Provenance = Field(default_factory=Provenance)


class TrainingReport(BaseModel):
    records: int
    scenarios_used: int
    scenarios_dropped: int
    actuator_loss: float
    sensor_loss: float
    actuator_refit_mse: Optional[float] = None
    sensor_refit_mse: Optional[float] = None
    actuator_lipschitz: float
    sensor_lipschitz: float
    provenance: Provenance = Field(default_factory=Provenance)


class MonitorCertificate(BaseModel):
    """Fitted ultimate-boundedness certificate for one observer"""
    observer: str
    alpha_v: float
    sigma: float
    ultimate_bound: float
    entered: bool
    entry_time_s: Optional[float] = None
    verified: bool
    alpha_at_boundary: bool = False
    guard_hits: int = 0
    v_initial: float
    v_final: float
    v_max: float


class ChannelMetrics(BaseModel):
    channel: str
    rms_active: float
    rms_healthy: float
    max_abs_error: float
    mean_abs_estimate: float
    effectiveness_error: Optional[float] = None


class ObserverMetrics(BaseModel):
    observer: str
    output_error_rms: List[float]
    output_error_max: List[float]
    actuator: List[ChannelMetrics]
    sensor: List[ChannelMetrics]
    fault_rms_total: float


class MetricsSummary(BaseModel):
    observers: Dict[str, ObserverMetrics]
    deltas: Optional[Dict[str, float]] = None
    provenance: Provenance = Field(default_factory=Provenance)


class DetectionDecision(BaseModel):
    observer: str
    channel: str
    flagged: bool
    onset_time_s: Optional[float] = None
    true_start_s: Optional[float] = None
    latency_s: Optional[float] = None


class DetectionReport(BaseModel):
    decisions: List[DetectionDecision]
    provenance: Provenance = Field(default_factory=Provenance)


class MonitorReport(BaseModel):
    certificates: List[MonitorCertificate]
    provenance: Provenance = Field(default_factory=Provenance)


class ComparisonRow(BaseModel):
    metric: str
    md: float
    gd: float
    delta: float


class ComparisonReport(BaseModel):
    rows: List[ComparisonRow]
    fault_rms_md: float
    fault_rms_gd: float
    md_not_worse: bool
    provenance: Provenance = Field(default_factory=Provenance)


class FeatureMapFile(BaseModel):
    """On-disk layout of a frozen feature map (row-major weights)"""
    format_version: Literal[1] = 1
    kind: Literal["actuator", "sensor"]
    input_dim: int
    n_features: int
    output_dim: int
    activation: Literal["tanh", "identity", "logistic"]
    bias_unit: bool
    layer_shapes: List[List[int]]
    weights: List[List[List[float]]]
    biases: List[List[float]]
    input_mean: List[float]
    input_scale: List[float]
    last_layer_init: List[List[float]]
    training_loss: Optional[float] = None
    provenance: Provenance = Field(default_factory=Provenance)
