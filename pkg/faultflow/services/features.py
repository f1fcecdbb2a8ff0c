"""
Offline-trained fault feature maps and their training data

A FeatureMap is the frozen hidden part of a regression network mapping
(x, u) to fault labels. Input z-scoring is part of the map and a constant
bias unit is appended to the last hidden activation, so the observer's last
layer W acts on phi(x, u) = [a_L(x, u); 1].
"""
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger
from scipy.special import expit
from sklearn.exceptions import ConvergenceWarning
from sklearn.neural_network import MLPRegressor
from sklearn.preprocessing import StandardScaler

from faultflow.errors import (
    GenerationFailureError, InvalidArgumentError, TrainingDivergedError,
)
from faultflow.models.report import FeatureMapFile, Provenance
from faultflow.models.scenario import (
    ActuatorFaultConfig, ArchConfig, FamilyConfig, ScenarioBlock, SensorFaultConfig,
)
from faultflow.services.fault_scenario import build_scenario
from faultflow.services.plant import Controller, simulate_plant
from faultflow.services.system_model import SystemModel

_ACTIVATIONS = {
    "tanh": (np.tanh, 1.0),
    "identity": (lambda a: a, 1.0),
    "logistic": (expit, 0.25),
}


@dataclass(frozen=True)
class FeatureMap:
    """Frozen hidden layers; weights are stored (in, out)"""
    kind: str
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    activation: str
    input_mean: np.ndarray
    input_scale: np.ndarray
    last_layer_init: np.ndarray
    bias_unit: bool = True
    training_loss: Optional[float] = None

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise InvalidArgumentError(f"unknown activation '{self.activation}'")
        if not self.weights or len(self.weights) != len(self.biases):
            raise InvalidArgumentError("feature map needs matching weight and bias layers")
        width = self.weights[0].shape[0]
        for W, b in zip(self.weights, self.biases):
            if W.shape[0] != width or b.shape != (W.shape[1],):
                raise InvalidArgumentError("feature map layer shapes do not chain")
            width = W.shape[1]
        if self.input_mean.shape != (self.input_dim,) or self.input_scale.shape != (self.input_dim,):
            raise InvalidArgumentError("normalization statistics must match the input dimension")
        if np.any(self.input_scale <= 0.0):
            raise InvalidArgumentError("input_scale entries must be positive")
        if self.last_layer_init.ndim != 2 or self.last_layer_init.shape[0] != self.n_features:
            raise InvalidArgumentError(
                f"last_layer_init must have {self.n_features} rows, got {self.last_layer_init.shape}"
            )

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_features(self) -> int:
        return self.weights[-1].shape[1] + (1 if self.bias_unit else 0)

    @property
    def output_dim(self) -> int:
        return self.last_layer_init.shape[1]

    @property
    def lipschitz_estimate(self) -> float:
        return lipschitz_bound(self)

    def evaluate_batch(self, Z) -> np.ndarray:
        """Features for a batch of raw inputs, one row per sample"""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if Z.shape[1] != self.input_dim:
            raise InvalidArgumentError(f"feature input must have {self.input_dim} columns")
        act = _ACTIVATIONS[self.activation][0]
        a = (Z - self.input_mean) / self.input_scale
        for W, b in zip(self.weights, self.biases):
            a = act(a @ W + b)
        if self.bias_unit:
            a = np.hstack([a, np.ones((a.shape[0], 1))])
        return a

    def evaluate(self, x, u) -> np.ndarray:
        return self.evaluate_batch(np.concatenate([np.ravel(x), np.ravel(u)])[None, :])[0]

    __call__ = evaluate


def lipschitz_bound(fm: FeatureMap) -> float:
    """Product of layer spectral norms, activation constants and input scalings"""
    norms = [np.linalg.norm(W, 2) if W.size else 0.0 for W in fm.weights]
    act_const = _ACTIVATIONS[fm.activation][1] ** len(fm.weights)
    return float(np.prod(norms) * act_const * np.max(1.0 / fm.input_scale))


def init_feature_map(
    input_dim: int,
    widths: Sequence[int],
    seed: int,
    activation: str = "tanh",
    output_dim: int = 1,
    kind: str = "actuator",
) -> FeatureMap:
    """Untrained map with Glorot-uniform hidden layers and a zero last layer"""
    if input_dim < 1 or not widths or any(w < 1 for w in widths):
        raise InvalidArgumentError("need input_dim >= 1 and positive widths")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    fan_in = input_dim
    for width in widths:
        bound = np.sqrt(6.0 / (fan_in + width))
        weights.append(rng.uniform(-bound, bound, (fan_in, width)))
        biases.append(rng.uniform(-bound, bound, width))
        fan_in = width
    return FeatureMap(
        kind=kind,
        weights=tuple(weights),
        biases=tuple(biases),
        activation=activation,
        input_mean=np.zeros(input_dim),
        input_scale=np.ones(input_dim),
        last_layer_init=np.zeros((widths[-1] + 1, output_dim)),
    )


@dataclass
class FaultDataset:
    """
    Closed-loop snapshots with their true fault labels

    Sensor labels live in output space: sum_j e_j fs_j.
    """
    states: np.ndarray
    inputs: np.ndarray
    actuator_faults: np.ndarray
    sensor_faults: np.ndarray
    sensor_dirs: np.ndarray
    times: np.ndarray
    scenario_ids: np.ndarray
    scenarios_used: int = 0
    scenarios_dropped: int = 0

    def __post_init__(self):
        rows = self.states.shape[0]
        for name in ("inputs", "actuator_faults", "sensor_faults", "times", "scenario_ids"):
            if getattr(self, name).shape[0] != rows:
                raise InvalidArgumentError(f"dataset column '{name}' has the wrong length")
        if not all(np.all(np.isfinite(a)) for a in (self.states, self.inputs, self.actuator_faults, self.sensor_faults)):
            raise InvalidArgumentError("dataset contains non-finite entries")

    def __len__(self):
        return self.states.shape[0]

    @property
    def feature_inputs(self) -> np.ndarray:
        return np.hstack([self.states, self.inputs])

    @property
    def sensor_labels(self) -> np.ndarray:
        return self.sensor_faults @ self.sensor_dirs.T

    @property
    def input_mean(self) -> np.ndarray:
        return self.feature_inputs.mean(axis=0)

    @property
    def input_scale(self) -> np.ndarray:
        return StandardScaler().fit(self.feature_inputs).scale_

    def to_frame(self) -> pd.DataFrame:
        columns = {"scenario": self.scenario_ids, "time_s": self.times}
        for prefix, block in (("x", self.states), ("u", self.inputs),
                              ("fa", self.actuator_faults), ("fs", self.sensor_faults)):
            for i in range(block.shape[1]):
                columns[f"{prefix}_{i + 1}"] = block[:, i]
        return pd.DataFrame(columns)


def _jitter_block(block: ScenarioBlock, family: FamilyConfig, rng: np.random.Generator, name: str) -> ScenarioBlock:
    actuator = []
    for f in block.actuator_faults:
        eta = float(np.clip(f.effectiveness + rng.uniform(-family.effectiveness_jitter, family.effectiveness_jitter), 0.0, 1.0))
        shift = max(rng.uniform(-family.window_jitter_s, family.window_jitter_s), -f.start_s)
        actuator.append(ActuatorFaultConfig(
            channel=f.channel, effectiveness=eta, start_s=f.start_s + shift, end_s=f.end_s + shift,
        ))
    sensor = []
    for f in block.sensor_faults:
        amp = f.amplitude_rad * (1.0 + rng.uniform(-family.amplitude_jitter_frac, family.amplitude_jitter_frac))
        freq = f.angular_frequency_rad_s * (1.0 + rng.uniform(-family.frequency_jitter_frac, family.frequency_jitter_frac))
        shift = max(rng.uniform(-family.window_jitter_s, family.window_jitter_s), -f.start_s)
        sensor.append(SensorFaultConfig(
            channel=f.channel, waveform=f.waveform, amplitude_rad=amp, angular_frequency_rad_s=freq,
            start_s=f.start_s + shift, end_s=f.end_s + shift,
        ))
    return ScenarioBlock(name=name, actuator_faults=actuator, sensor_faults=sensor, disturbance=block.disturbance)


def generate_dataset(
    model: SystemModel,
    controller: Controller,
    family: FamilyConfig,
    count: int,
    seed: int,
    dt_s: float = 5e-3,
    horizon_s: float = 60.0,
    sample_period_s: float = 0.1,
    x0=None,
) -> FaultDataset:
    """
    Simulate count randomized scenarios and sample them at a fixed period

    Templates are used in turn; jitter is drawn from a generator seeded
    with seed, so equal seeds give identical datasets. Diverged runs are
    dropped with a warning.

    Raises:
        GenerationFailureError: more than half of the runs diverged
    """
    if count < 1:
        raise InvalidArgumentError("count must be >= 1")
    rng = np.random.default_rng(seed)
    templates = family.templates or [ScenarioBlock()]
    sample_every = max(1, int(round(sample_period_s / dt_s)))
    x0 = np.zeros(model.state_dim) if x0 is None else x0

    blocks: List[Tuple[np.ndarray, ...]] = []
    dropped = 0
    for k in range(count):
        block = _jitter_block(templates[k % len(templates)], family, rng, f"family_{k}")
        scenario = build_scenario(block, model, horizon_s)
        traj = simulate_plant(model, scenario, controller, x0, dt_s, horizon_s, sample_every)
        if traj.diverged:
            logger.warning(f"Dropping scenario {k}: diverged at t={traj.failure_time_s:.3f} s")
            dropped += 1
            continue
        blocks.append((traj.states, traj.inputs, traj.actuator_faults, traj.sensor_faults,
                       traj.times, np.full(len(traj), k)))

    if dropped * 2 > count:
        logger.error(f"Dataset generation failed: {dropped}/{count} scenarios diverged")
        raise GenerationFailureError(f"{dropped} of {count} scenarios diverged")
    columns = [np.concatenate(c) for c in zip(*blocks)]
    dataset = FaultDataset(
        states=columns[0], inputs=columns[1], actuator_faults=columns[2], sensor_faults=columns[3],
        sensor_dirs=np.asarray(model.sensor_fault_dirs), times=columns[4], scenario_ids=columns[5],
        scenarios_used=len(blocks), scenarios_dropped=dropped,
    )
    logger.info(f"Generated {len(dataset)} records from {len(blocks)} scenarios ({dropped} dropped)")
    return dataset


@dataclass
class TrainedFeatures:
    actuator: FeatureMap
    sensor: FeatureMap
    actuator_loss: float
    sensor_loss: float
    actuator_refit_mse: Optional[float] = None
    sensor_refit_mse: Optional[float] = None


def _fit_network(inputs, labels, arch: ArchConfig, epochs, seed, learning_rate, batch_size, kind) -> MLPRegressor:
    net = MLPRegressor(
        hidden_layer_sizes=tuple(arch.hidden_widths),
        activation=arch.activation,
        solver="sgd",
        learning_rate="constant",
        learning_rate_init=learning_rate,
        momentum=0.0,
        nesterovs_momentum=False,
        alpha=0.0,
        batch_size=min(batch_size, inputs.shape[0]),
        max_iter=epochs,
        shuffle=True,
        tol=0.0,
        n_iter_no_change=epochs + 1,
        random_state=seed,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        warnings.simplefilter("ignore", UserWarning)
        try:
            net.fit(inputs, labels)
        except ValueError as e:
            if "non-finite" in str(e):
                logger.error(f"{kind} network diverged: {e}")
                raise TrainingDivergedError(f"{kind} network diverged: {e}")
            raise
    if not np.isfinite(net.loss_):
        logger.error(f"{kind} network produced a non-finite loss")
        raise TrainingDivergedError(f"{kind} training loss is not finite")
    return net


def train_features(
    dataset: FaultDataset,
    arch: ArchConfig,
    epochs: int,
    seed: int,
    learning_rate: float = 1e-3,
    batch_size: int = 64,
    refit_last_layer: bool = True,
) -> TrainedFeatures:
    """
    Train the actuator and sensor networks and split off their last layers

    Both networks see z-scored (x, u). With refit_last_layer the last layer
    is replaced by the least-squares fit on the frozen features.

    Raises:
        TrainingDivergedError: non-finite loss or weights
    """
    if len(dataset) == 0:
        raise InvalidArgumentError("dataset is empty")
    if dataset.actuator_faults.shape[1] == 0:
        raise InvalidArgumentError("model has no actuator fault channels to train on")
    raw = dataset.feature_inputs
    scaler = StandardScaler().fit(raw)
    scaled = scaler.transform(raw)

    results = {}
    for kind, labels in (("actuator", dataset.actuator_faults), ("sensor", dataset.sensor_labels)):
        net = _fit_network(scaled, labels, arch, epochs, seed, learning_rate, batch_size, kind)
        fm = FeatureMap(
            kind=kind,
            weights=tuple(np.array(W) for W in net.coefs_[:-1]),
            biases=tuple(np.array(b) for b in net.intercepts_[:-1]),
            activation=arch.activation,
            input_mean=np.array(scaler.mean_),
            input_scale=np.array(scaler.scale_),
            last_layer_init=np.vstack([net.coefs_[-1], net.intercepts_[-1][None, :]]),
            training_loss=float(net.loss_),
        )
        refit_mse = None
        if refit_last_layer:
            phi = fm.evaluate_batch(raw)
            last, *_ = np.linalg.lstsq(phi, labels, rcond=None)
            refit_mse = float(np.mean((phi @ last - labels) ** 2))
            fm = replace(fm, last_layer_init=last)
        logger.info(f"Trained {kind} features: loss={net.loss_:.4e} refit_mse={refit_mse}")
        results[kind] = (fm, float(net.loss_), refit_mse)

    return TrainedFeatures(
        actuator=results["actuator"][0],
        sensor=results["sensor"][0],
        actuator_loss=results["actuator"][1],
        sensor_loss=results["sensor"][1],
        actuator_refit_mse=results["actuator"][2],
        sensor_refit_mse=results["sensor"][2],
    )


def save_feature_map(fm: FeatureMap, path: Union[str, Path], provenance: Optional[Provenance] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    record = FeatureMapFile(
        kind=fm.kind,
        input_dim=fm.input_dim,
        n_features=fm.n_features,
        output_dim=fm.output_dim,
        activation=fm.activation,
        bias_unit=fm.bias_unit,
        layer_shapes=[list(W.shape) for W in fm.weights],
        weights=[W.tolist() for W in fm.weights],
        biases=[b.tolist() for b in fm.biases],
        input_mean=fm.input_mean.tolist(),
        input_scale=fm.input_scale.tolist(),
        last_layer_init=fm.last_layer_init.tolist(),
        training_loss=fm.training_loss,
        provenance=provenance or Provenance(),
    )
    path.write_text(record.model_dump_json(indent=2))
    return path


def load_feature_map(path: Union[str, Path]) -> FeatureMap:
    """
    Raises:
        FileNotFoundError: missing file
        InvalidArgumentError: header does not match the stored arrays
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"feature map not found: {path}")
    record = FeatureMapFile.model_validate_json(path.read_text())
    weights = tuple(np.array(W, dtype=float).reshape(shape) for W, shape in zip(record.weights, record.layer_shapes))
    fm = FeatureMap(
        kind=record.kind,
        weights=weights,
        biases=tuple(np.array(b, dtype=float) for b in record.biases),
        activation=record.activation,
        input_mean=np.array(record.input_mean, dtype=float),
        input_scale=np.array(record.input_scale, dtype=float),
        last_layer_init=np.array(record.last_layer_init, dtype=float).reshape(record.n_features, record.output_dim),
        bias_unit=record.bias_unit,
        training_loss=record.training_loss,
    )
    if (fm.input_dim, fm.n_features, fm.output_dim) != (record.input_dim, record.n_features, record.output_dim):
        raise InvalidArgumentError(f"feature map header in {path} does not match its weights")
    return fm
