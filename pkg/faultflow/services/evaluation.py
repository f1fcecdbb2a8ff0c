"""
Estimation metrics, threshold detection and MD/GD comparison
"""
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from faultflow.errors import IncomparableTracesError
from faultflow.models.report import (
    ChannelMetrics, ComparisonReport, ComparisonRow, DetectionDecision, DetectionReport,
    MetricsSummary, ObserverMetrics,
)
from faultflow.models.scenario import DetectionBlock
from faultflow.services.simulation import ObserverTrace, SimTrace

# fraction of each fault window used for the steady-state effectiveness error
STEADY_STATE_FRACTION = 0.25
DWELL_TOL_S = 1e-9


def _rms(values: np.ndarray) -> float:
    return float(np.sqrt(np.mean(values ** 2))) if values.size else 0.0


def active_windows(mask: np.ndarray) -> List[Tuple[int, int]]:
    """Contiguous runs of True as [start, stop) index pairs"""
    padded = np.concatenate([[False], mask.astype(bool), [False]])
    edges = np.flatnonzero(np.diff(padded.astype(int)))
    return list(zip(edges[0::2], edges[1::2]))


def _effectiveness_error(eta_hat: np.ndarray, eta_true: np.ndarray, mask: np.ndarray) -> Optional[float]:
    errors = []
    for start, stop in active_windows(mask):
        tail = max(1, int(np.ceil(STEADY_STATE_FRACTION * (stop - start))))
        errors.append(np.mean(np.abs(eta_hat[stop - tail:stop] - eta_true[stop - tail:stop])))
    return float(np.mean(errors)) if errors else None


def _channel(label, estimate, truth, mask, eta=None) -> ChannelMetrics:
    err = estimate - truth
    return ChannelMetrics(
        channel=label,
        rms_active=_rms(err[mask]),
        rms_healthy=_rms(err[~mask]),
        max_abs_error=float(np.max(np.abs(err))) if err.size else 0.0,
        mean_abs_estimate=float(np.mean(np.abs(estimate))) if estimate.size else 0.0,
        effectiveness_error=None if eta is None else _effectiveness_error(eta[0], eta[1], mask),
    )


def observer_metrics(trace: SimTrace, obs: ObserverTrace) -> ObserverMetrics:
    actuator = [
        _channel(f"actuator_{i + 1}", obs.fa_hat[:, i], trace.fa_true[:, i], trace.fa_active[:, i],
                 (obs.eta_hat[:, i], trace.eta_true[:, i]))
        for i in range(trace.fa_true.shape[1])
    ]
    sensor = [
        _channel(f"sensor_{j + 1}", obs.fs_hat[:, j], trace.fs_true[:, j], trace.fs_active[:, j])
        for j in range(trace.fs_true.shape[1])
    ]
    fault_err = np.hstack([obs.fa_hat - trace.fa_true, obs.fs_hat - trace.fs_true])
    return ObserverMetrics(
        observer=obs.name,
        output_error_rms=np.sqrt(np.mean(obs.e_out ** 2, axis=0)).tolist(),
        output_error_max=np.max(np.abs(obs.e_out), axis=0).tolist(),
        actuator=actuator,
        sensor=sensor,
        fault_rms_total=_rms(fault_err),
    )


def metric_rows(m: ObserverMetrics) -> Dict[str, float]:
    """Flat scalar view used for deltas and comparison tables"""
    rows = {f"output_error_rms_{i + 1}": v for i, v in enumerate(m.output_error_rms)}
    for c in m.actuator + m.sensor:
        rows[f"{c.channel}_rms_active"] = c.rms_active
        rows[f"{c.channel}_rms_healthy"] = c.rms_healthy
    rows["fault_rms_total"] = m.fault_rms_total
    return rows


def metrics(trace: SimTrace) -> MetricsSummary:
    """Per-observer error statistics and md minus gd deltas when both ran"""
    per_observer = {name: observer_metrics(trace, obs) for name, obs in trace.observers.items()}
    deltas = None
    if "md" in per_observer and "gd" in per_observer:
        md, gd = metric_rows(per_observer["md"]), metric_rows(per_observer["gd"])
        deltas = {k: md[k] - gd[k] for k in md}
    return MetricsSummary(observers=per_observer, deltas=deltas, provenance=trace.provenance)


@dataclass(frozen=True)
class DetectionThresholds:
    actuator: float
    sensor: float
    dwell_s: float

    @classmethod
    def from_block(cls, block: DetectionBlock) -> "DetectionThresholds":
        return cls(block.actuator_threshold_nm, block.sensor_threshold_rad, block.dwell_s)


def _onset(times: np.ndarray, over: np.ndarray, dwell_s: float) -> Optional[float]:
    run_start = None
    for t, flag in zip(times, over):
        if not flag:
            run_start = None
            continue
        if run_start is None:
            run_start = t
        if t - run_start >= dwell_s - DWELL_TOL_S:
            return float(t)
    return None


def detect(trace: SimTrace, thresholds: DetectionThresholds) -> DetectionReport:
    """Flag a channel once |estimate| stays above its threshold for the dwell time"""
    decisions = []
    for name, obs in trace.observers.items():
        channels = (
            [(f"actuator_{i + 1}", obs.fa_hat[:, i], trace.fa_active[:, i], thresholds.actuator)
             for i in range(obs.fa_hat.shape[1])]
            + [(f"sensor_{j + 1}", obs.fs_hat[:, j], trace.fs_active[:, j], thresholds.sensor)
               for j in range(obs.fs_hat.shape[1])]
        )
        for label, estimate, active, threshold in channels:
            onset = _onset(trace.times, np.abs(estimate) > threshold, thresholds.dwell_s)
            starts = np.flatnonzero(active)
            true_start = float(trace.times[starts[0]]) if starts.size else None
            latency = onset - true_start if onset is not None and true_start is not None else None
            decisions.append(DetectionDecision(
                observer=name, channel=label, flagged=onset is not None,
                onset_time_s=onset, true_start_s=true_start, latency_s=latency,
            ))
    return DetectionReport(decisions=decisions, provenance=trace.provenance)


def _single(trace: SimTrace) -> ObserverTrace:
    if len(trace.observers) != 1:
        raise IncomparableTracesError("comparison needs single-observer traces")
    return next(iter(trace.observers.values()))


def compare_summaries(md_trace: SimTrace, gd_trace: SimTrace) -> ComparisonReport:
    """
    Row-by-row md minus gd metrics over two runs of one scenario

    Raises:
        IncomparableTracesError: scenario hashes or time grids differ
    """
    md_hash, gd_hash = md_trace.provenance.scenario_hash, gd_trace.provenance.scenario_hash
    if md_hash != gd_hash:
        raise IncomparableTracesError(f"scenario hashes differ: {md_hash} vs {gd_hash}")
    if md_trace.times.shape != gd_trace.times.shape or not np.allclose(md_trace.times, gd_trace.times):
        raise IncomparableTracesError("traces use different time grids")
    md = metric_rows(observer_metrics(md_trace, _single(md_trace)))
    gd = metric_rows(observer_metrics(gd_trace, _single(gd_trace)))
    rows = [ComparisonRow(metric=k, md=md[k], gd=gd[k], delta=md[k] - gd[k]) for k in md if k in gd]
    return ComparisonReport(
        rows=rows,
        fault_rms_md=md["fault_rms_total"],
        fault_rms_gd=gd["fault_rms_total"],
        md_not_worse=md["fault_rms_total"] <= gd["fault_rms_total"],
        provenance=md_trace.provenance,
    )
