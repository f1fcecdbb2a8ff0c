"""
Command-line entry point

    faultflow analyze --config CONFIG
    faultflow train   --config CONFIG [--seed N]
    faultflow run     --config CONFIG [--config CONFIG ...] [--jobs N] [--dry-run]
    faultflow compare TRACE_MD TRACE_GD

Exit codes: 0 success, 2 configuration error, 3 divergence, 4 comparison failure.
"""
import argparse
import json
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional

import numpy as np
from loguru import logger
from pydantic import ValidationError

from faultflow import __version__
from faultflow.errors import (
    FaultFlowError, GenerationFailureError, IncomparableTracesError, InvalidArgumentError,
    NumericalDomainError, ObserverDivergedError, TrainingDivergedError,
)
from faultflow.models.report import (
    AnalysisReport, DetectionReport, MonitorReport, Provenance, TrainingReport, XiSuggestion,
)
from faultflow.models.scenario import ScenarioConfig, load_config
from faultflow.services.evaluation import DetectionThresholds, compare_summaries, detect, metrics
from faultflow.services.factory import (
    build_fault_scenario, build_observers, build_plant, design_observer_gain, load_features,
)
from faultflow.services.features import generate_dataset, save_feature_map, train_features
from faultflow.services.geometry import angle_profile, diffmap_jacobians, isolability_report, relative_degrees
from faultflow.services.monitor import lyapunov_monitor
from faultflow.services.observer import design_xi_from_angles
from faultflow.services.plant import simulate_plant
from faultflow.services.simulation import SimConfig, frame_to_trace, run_scenario
from faultflow.utils.artifacts import (
    header_provenance, provenance_header, read_csv, write_csv, write_json,
)
from faultflow.utils.structured_logger import log_with_context, setup_logging

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_COMPARISON = 4


def _load(path: str, seed: Optional[int]) -> ScenarioConfig:
    config = load_config(path)
    if seed is not None:
        config = config.model_copy(update={"seed": seed})
    return config


def _provenance(config: ScenarioConfig) -> Provenance:
    return Provenance(config_hash=config.config_hash(), scenario_hash=config.scenario_hash(), seed=config.seed)


def _out_dir(args, config: ScenarioConfig) -> Path:
    out = Path(args.out_dir or config.sim.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sensor_output_angles(lower_bounds, sensor_dirs: np.ndarray) -> List[float]:
    """Angle bound per output component: the smallest over sensor channels touching it"""
    angles = []
    for k in range(sensor_dirs.shape[0]):
        touching = [lower_bounds[f"sensor_{j + 1}"] for j in range(sensor_dirs.shape[1]) if sensor_dirs[k, j] != 0.0]
        angles.append(min(touching) if touching else math.pi / 2)
    return angles


def cmd_analyze(args) -> int:
    config = _load(args.config, args.seed)
    out = _out_dir(args, config)
    provenance = _provenance(config)
    analysis = config.analysis
    plant = build_plant(config)
    model = plant.model

    order = analysis.order
    if order is None:
        _, order = relative_degrees(model, plant.x_op, r_max=analysis.relative_degree_max)
    log_with_context("info", f"Analyzing isolability at order {order}", command="analyze",
                     config_hash=provenance.config_hash, seed=config.seed)

    scenario = build_fault_scenario(config, plant, analysis.horizon_s)
    traj = simulate_plant(model, scenario, plant.controller, plant.x0, analysis.dt_s, analysis.horizon_s)
    picks = np.unique(np.linspace(0, len(traj) - 1, analysis.samples).round().astype(int))
    profile = angle_profile(model, traj.states[picks], traj.inputs[picks], order,
                            analysis.angle_floor_rad, times=traj.times[picks],
                            r_max=analysis.relative_degree_max)
    point = isolability_report(diffmap_jacobians(model, plant.x_op, plant.u_op, order), analysis.angle_floor_rad)

    bounds = profile.lower_bounds
    xi_a = design_xi_from_angles(
        [bounds[f"actuator_{i + 1}"] for i in range(model.actuator_fault_count)], analysis.xi_range
    )
    xi_s = design_xi_from_angles(_sensor_output_angles(bounds, np.asarray(model.sensor_fault_dirs)), analysis.xi_range)
    xi = XiSuggestion(
        xi_range=analysis.xi_range,
        theta_lower_bounds_rad=bounds,
        xi_actuator=xi_a.tolist(),
        xi_sensor=xi_s.tolist(),
        provenance=provenance,
    )
    report = AnalysisReport(
        report=point,
        samples_used=len(profile.sample_indices),
        samples_skipped=profile.skipped,
        theta_lower_bounds_rad=bounds,
        xi=xi,
        provenance=provenance,
    )
    write_json(out / "isolability_report.json", report)
    write_csv(out / "angle_profile.csv", profile.to_frame(), provenance_header(provenance))
    write_json(out / "xi.json", xi)
    for c in point.channels:
        if not c.isolable:
            logger.warning(f"{c.channel} is not isolable at the operating point (theta_min={c.theta_min_rad:.3e})")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _load(args.config, args.seed)
    out = _out_dir(args, config)
    provenance = _provenance(config)
    training = config.training
    plant = build_plant(config)
    family = training.family
    if not family.templates:
        family = family.model_copy(update={"templates": [config.scenario]})
    log_with_context("info", f"Generating {training.count} training scenarios", command="train",
                     config_hash=provenance.config_hash, seed=config.seed)

    dataset = generate_dataset(plant.model, plant.controller, family, training.count, config.seed,
                               training.dt_s, training.horizon_s, training.sample_period_s, plant.x0)
    trained = train_features(dataset, training.arch, training.epochs, config.seed,
                             training.learning_rate, training.batch_size, training.refit_last_layer)
    save_feature_map(trained.actuator, out / "features_actuator.json", provenance)
    save_feature_map(trained.sensor, out / "features_sensor.json", provenance)
    write_csv(out / "dataset.csv", dataset.to_frame(), provenance_header(provenance))
    write_json(out / "training_report.json", TrainingReport(
        records=len(dataset),
        scenarios_used=dataset.scenarios_used,
        scenarios_dropped=dataset.scenarios_dropped,
        actuator_loss=trained.actuator_loss,
        sensor_loss=trained.sensor_loss,
        actuator_refit_mse=trained.actuator_refit_mse,
        sensor_refit_mse=trained.sensor_refit_mse,
        actuator_lipschitz=trained.actuator.lipschitz_estimate,
        sensor_lipschitz=trained.sensor.lipschitz_estimate,
        provenance=provenance,
    ))
    return EXIT_OK


def run_config(path: str, out_dir: Optional[str], seed: Optional[int], dry_run: bool) -> int:
    """Simulate one config and write its artifacts; returns an exit code"""
    config = _load(path, seed)
    provenance = _provenance(config)
    plant = build_plant(config)
    scenario = build_fault_scenario(config, plant)
    sim_config = SimConfig.from_block(config.sim)
    actuator_features, sensor_features = load_features(config)
    design = design_observer_gain(config, plant)
    observers = build_observers(config, plant, design, actuator_features, sensor_features)
    if dry_run:
        logger.info(f"Dry run of {path}: config valid, {len(observers)} observers, rate {design.rate:.4g} 1/s")
        return EXIT_OK

    log_with_context("info", f"Running {path}", command="run",
                     config_hash=provenance.config_hash, seed=config.seed)
    trace = run_scenario(plant.model, scenario, observers, sim_config, plant.controller)
    trace.provenance = provenance
    certificates = [lyapunov_monitor(trace, name) for name in trace.observers]

    out = Path(out_dir or config.sim.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in trace.observers:
        header = provenance_header(provenance, observer=name, failed=trace.failed,
                                   failure_time_s=trace.failure_time_s)
        write_csv(out / f"trace_{name}.csv", trace.to_frame(name), header)
    write_json(out / "metrics.json", metrics(trace))
    write_json(out / "monitor.json", MonitorReport(certificates=certificates, provenance=provenance))
    detections: DetectionReport = detect(trace, DetectionThresholds.from_block(config.detection))
    write_json(out / "detections.json", detections)
    return EXIT_DIVERGED if trace.failed else EXIT_OK


def _run_job(job) -> int:
    path, out_dir, seed, dry_run, level, json_output = job
    setup_logging(level, json_output)
    return _guarded(lambda: run_config(path, out_dir, seed, dry_run))


def cmd_run(args) -> int:
    configs = args.config
    if len(configs) == 1:
        return run_config(configs[0], args.out_dir, args.seed, args.dry_run)
    jobs = []
    for path in configs:
        out_dir = str(Path(args.out_dir) / Path(path).stem) if args.out_dir else None
        jobs.append((path, out_dir, args.seed, args.dry_run, args.log_level, args.log_json))
    with ProcessPoolExecutor(max_workers=args.jobs) as pool:
        codes = list(pool.map(_run_job, jobs))
    for path, code in zip(configs, codes):
        logger.info(f"{path}: exit {code}")
    return max(codes)


def cmd_compare(args) -> int:
    traces = []
    for path in (args.trace_md, args.trace_gd):
        frame, header = read_csv(path)
        traces.append(frame_to_trace(frame, header.get("observer", Path(path).stem),
                                     header_provenance(header), header.get("failed") == "True"))
    report = compare_summaries(*traces)
    out = Path(args.out_dir or Path(args.trace_md).parent)
    write_json(out / "comparison.json", report)

    print(f"{'metric':<32}{'md':>14}{'gd':>14}{'delta':>14}")
    for row in report.rows:
        print(f"{row.metric:<32}{row.md:>14.6e}{row.gd:>14.6e}{row.delta:>14.6e}")
    if not report.md_not_worse:
        logger.error(f"md fault RMS {report.fault_rms_md:.6e} exceeds gd {report.fault_rms_gd:.6e}")
        return EXIT_COMPARISON
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", default=None, help="Artifact directory (default: sim.out_dir)")
    common.add_argument("--seed", type=int, default=None, help="Override the config seed")
    common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    common.add_argument("--log-json", action="store_true", default=None, help="JSON log lines")

    parser = argparse.ArgumentParser(prog="faultflow", description="Geometric fault detection and isolation")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    analyze = sub.add_parser("analyze", parents=[common], help="Isolability analysis and xi design")
    analyze.add_argument("--config", required=True)
    analyze.set_defaults(handler=cmd_analyze)

    train = sub.add_parser("train", parents=[common], help="Generate data and train feature maps")
    train.add_argument("--config", required=True)
    train.set_defaults(handler=cmd_train)

    run = sub.add_parser("run", parents=[common], help="Simulate plant and observers")
    run.add_argument("--config", required=True, action="append")
    run.add_argument("--jobs", type=int, default=1)
    run.add_argument("--dry-run", action="store_true")
    run.set_defaults(handler=cmd_run)

    compare = sub.add_parser("compare", parents=[common], help="Compare md and gd traces")
    compare.add_argument("trace_md")
    compare.add_argument("trace_gd")
    compare.set_defaults(handler=cmd_compare)
    return parser


def _guarded(action) -> int:
    try:
        return action()
    except (ValidationError, json.JSONDecodeError, FileNotFoundError, InvalidArgumentError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except (ObserverDivergedError, TrainingDivergedError, GenerationFailureError, NumericalDomainError) as e:
        logger.error(f"Diverged: {e}")
        return EXIT_DIVERGED
    except IncomparableTracesError as e:
        logger.error(f"Comparison failed: {e}")
        return EXIT_COMPARISON
    except FaultFlowError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_CONFIG


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level, args.log_json)
    if getattr(args, "jobs", 1) < 1:
        logger.error("--jobs must be >= 1")
        return EXIT_CONFIG
    return _guarded(lambda: args.handler(args))
