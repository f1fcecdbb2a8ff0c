"""
Runtime ultimate-boundedness monitor

V = 1/2 e^T M e + sum_i D(w*_i || w_i) / gamma_i, with the ideal last layers
W* taken as the least-squares fit of the frozen features to the true fault
signals of the run. A one-step inequality V_{k+1} <= exp(-alpha dt) V_k + sigma dt
is fitted to the sampled V, alpha by least squares with either sign.
"""
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from loguru import logger

from faultflow.errors import InvalidArgumentError
from faultflow.models.report import MonitorCertificate
from faultflow.services.mirror_map import bregman_columns
from faultflow.services.observer import ObserverParams
from faultflow.services.simulation import SimTrace

# residual set is entered when V stays below this multiple of the bound
ENTRY_MARGIN = 1.1
ALPHA_MIN = 1e-4
# at most one e-fold of V per sample
ALPHA_MAX_STEP = 1.0
EPS = float(np.finfo(float).eps)
ROUNDOFF_ULPS = 8.0


def ideal_last_layers(trace: SimTrace, params: ObserverParams):
    """Least-squares W* for both sides over the recorded true signals"""
    raw = np.hstack([trace.states, trace.inputs])
    phi_a = params.actuator_features.evaluate_batch(raw)
    phi_s = params.sensor_features.evaluate_batch(raw)
    W_a, *_ = np.linalg.lstsq(phi_a, trace.fa_true, rcond=None)
    W_s, *_ = np.linalg.lstsq(phi_s, trace.fs_true, rcond=None)
    return W_a, W_s


def lyapunov_values(trace: SimTrace, name: str, params: Optional[ObserverParams] = None) -> np.ndarray:
    obs = trace.observers[name]
    params = params or obs.params
    if params is None or obs.W_a is None or obs.W_s is None:
        raise InvalidArgumentError(f"observer '{name}' has no weight history or parameters to monitor")
    W_a_star, W_s_star = ideal_last_layers(trace, params)
    mirror_a, mirror_s = params.geometry()
    e = trace.states - obs.x_hat
    V = 0.5 * np.einsum("ki,ij,kj->k", e, params.metric, e)
    for mirror, W_star, history, gamma in (
        (mirror_a, W_a_star, obs.W_a, params.gamma_actuator),
        (mirror_s, W_s_star, obs.W_s, params.gamma_sensor),
    ):
        active = gamma > 0.0
        if not np.any(active):
            continue
        for k, W in enumerate(history):
            V[k] += np.sum(bregman_columns(mirror, W_star, W)[active] / gamma[active])
    return V


@dataclass(frozen=True)
class DecayFit:
    """Fitted one-step decay; at_boundary marks an alpha clipped to the resolvable range"""
    alpha: float
    sigma: float
    at_boundary: bool = False


def one_step_decay_rate(V: np.ndarray, dt: float) -> Optional[float]:
    """
    alpha = -log(q) / dt from the least-squares fit V_{k+1} = q V_k + c

    Either sign comes out: q > 1 gives a negative rate, q <= 0 an infinite
    one. None for a series that is identically zero.
    """
    if not np.any(V):
        return None
    before, after = V[:-1], V[1:]
    spread = before - before.mean()
    variance = float(spread @ spread)
    if variance == 0.0:
        return 0.0
    q = float(spread @ (after - after.mean())) / variance
    return math.inf if q <= 0.0 else -math.log(q) / dt


def _sigma_for(V: np.ndarray, dt: float, alpha: float) -> float:
    """Smallest sigma for the one-step inequality; increments at float resolution of V do not count"""
    carried = np.exp(-alpha * dt) * V[:-1]
    excess = V[1:] - carried - ROUNDOFF_ULPS * EPS * np.maximum(np.abs(V[1:]), np.abs(carried))
    return max(0.0, float(excess.max()) / dt)


def fit_decay(V: np.ndarray, dt: float) -> DecayFit:
    """
    Fit alpha to the one-step model of V, then the smallest sigma for it

    A non-positive alpha is returned as fitted. A positive estimate outside
    [ALPHA_MIN, ALPHA_MAX_STEP / dt] is clipped and flagged. A series that
    is identically zero gets the largest resolvable alpha and sigma = 0.
    """
    V = np.asarray(V, dtype=float)
    alpha_max = ALPHA_MAX_STEP / dt
    estimate = one_step_decay_rate(V, dt)
    if estimate is None:
        return DecayFit(alpha_max, 0.0)
    if estimate <= 0.0:
        return DecayFit(estimate, _sigma_for(V, dt, estimate))
    alpha = min(max(estimate, ALPHA_MIN), alpha_max)
    return DecayFit(alpha, _sigma_for(V, dt, alpha), at_boundary=alpha != estimate)


def lyapunov_monitor(trace: SimTrace, name: str, params: Optional[ObserverParams] = None) -> MonitorCertificate:
    """
    Fit and check the boundedness certificate of one observer

    Stores V on the observer trace. An unverified certificate is a result,
    not an error.
    """
    if len(trace) < 2:
        raise InvalidArgumentError("monitor needs at least two samples")
    obs = trace.observers[name]
    V = lyapunov_values(trace, name, params)
    obs.V = V
    fit = fit_decay(V, trace.dt_s)
    alpha, sigma = fit.alpha, fit.sigma
    bound = sigma / alpha if alpha > 0.0 else float("inf")

    inside = V <= ENTRY_MARGIN * bound
    outside = np.flatnonzero(~inside)
    entry = 0 if outside.size == 0 else int(outside[-1]) + 1
    entered = entry < len(V)
    entry_time = float(trace.times[entry]) if entered else None
    verified = alpha > 0.0 and not fit.at_boundary and (sigma == 0.0 or entered)

    if obs.guard_hits:
        logger.warning(f"{name} observer hit the weight guard {obs.guard_hits} times")
    logger.info(f"Monitor {name}: alpha={alpha:.4g} sigma={sigma:.4g} bound={bound:.4g} verified={verified}")
    return MonitorCertificate(
        observer=name,
        alpha_v=alpha,
        sigma=sigma,
        ultimate_bound=bound,
        entered=entered,
        entry_time_s=entry_time,
        verified=verified,
        alpha_at_boundary=fit.at_boundary,
        guard_hits=obs.guard_hits,
        v_initial=float(V[0]),
        v_final=float(V[-1]),
        v_max=float(V.max()),
    )
