"""
Neural fault observer with mirror-descent adaptation of its last layers

    x_hat' = f(x_hat) + G(x_hat) u + Gf(x_hat) W_a^T phi_a + L r
    y_hat  = h(x_hat) + W_s^T phi_s,        r = y - y_hat
    w_a,i' = -Gamma_a,i K_a,i^{-1} phi_a z_i - sigma_a w_a,i
    w_s,j' = +Gamma_s,j K_s,j^{-1} phi_s r_j - sigma_s w_s,j

with z = s Gf(x_hat)^T M L r and K the mirror-map Hessian blocks. The
gradient-descent baseline uses K = I.

z stands in for the gradient of the estimation error, and whether it points
along or against that gradient depends on L and M. The design evaluates the
quasi-static sensitivity J = -Gf^T M L C A_L^{-1} Gf, which maps a constant
actuator-fault error to z at s = +1, and sets s = -sign(tr J) so fa_hat
moves toward the fault. Riccati designs for double-integrator plants give
J < 0 and s = +1; pole-placed or explicit gains can flip it.
"""
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy import linalg, signal

from faultflow.config import GUARD_RADIUS
from faultflow.errors import (
    DesignInfeasibleError, InvalidArgumentError, MetricVerificationError, ObserverDivergedError,
)
from faultflow.services.features import FeatureMap
from faultflow.services.mirror_map import MirrorMapEN, solve_hessian_blocks
from faultflow.services.system_model import SystemModel, check_vector, linearize
from faultflow.utils.numerics import rk4_step


@dataclass(frozen=True)
class ObserverParams:
    """Static part of one observer"""
    kind: str
    model: SystemModel
    gain: np.ndarray
    metric: np.ndarray
    gamma_actuator: np.ndarray
    gamma_sensor: np.ndarray
    sigma_actuator: float
    sigma_sensor: float
    mirror_actuator: MirrorMapEN
    mirror_sensor: MirrorMapEN
    actuator_features: FeatureMap
    sensor_features: FeatureMap
    guard_radius: float = GUARD_RADIUS
    sensitivity_sign: float = 1.0

    def __post_init__(self):
        n, p = self.model.state_dim, self.model.output_dim
        q_a = self.model.actuator_fault_count
        if self.kind not in ("md", "gd"):
            raise InvalidArgumentError(f"unknown observer kind '{self.kind}'")
        if self.gain.shape != (n, p):
            raise InvalidArgumentError(f"gain must be {n}x{p}, got {self.gain.shape}")
        if self.metric.shape != (n, n) or not np.allclose(self.metric, self.metric.T):
            raise InvalidArgumentError("metric must be a symmetric n x n matrix")
        if np.min(np.linalg.eigvalsh(self.metric)) <= 0.0:
            raise InvalidArgumentError("metric must be positive definite")
        gamma_a = np.broadcast_to(np.asarray(self.gamma_actuator, dtype=float), (q_a,)).copy()
        gamma_s = np.broadcast_to(np.asarray(self.gamma_sensor, dtype=float), (p,)).copy()
        if np.any(gamma_a < 0.0) or np.any(gamma_s < 0.0):
            raise InvalidArgumentError("adaptation gains must be non-negative")
        if self.sensitivity_sign not in (-1.0, 1.0):
            raise InvalidArgumentError("sensitivity_sign must be -1 or 1")
        if self.sigma_actuator < 0.0 or self.sigma_sensor < 0.0:
            raise InvalidArgumentError("leakage rates must be non-negative")
        if self.mirror_actuator.columns != q_a or self.mirror_sensor.columns != p:
            raise InvalidArgumentError("mirror maps must have one xi entry per estimated channel")
        for fm, out in ((self.actuator_features, q_a), (self.sensor_features, p)):
            if fm.input_dim != n + self.model.input_dim:
                raise InvalidArgumentError(f"{fm.kind} features expect input_dim {fm.input_dim}, model gives {n + self.model.input_dim}")
            if fm.output_dim != out:
                raise InvalidArgumentError(f"{fm.kind} features were trained for {fm.output_dim} outputs, need {out}")
        object.__setattr__(self, "gamma_actuator", gamma_a)
        object.__setattr__(self, "gamma_sensor", gamma_s)

    @property
    def preconditioned(self) -> bool:
        return self.kind == "md"

    def geometry(self) -> Tuple[MirrorMapEN, MirrorMapEN]:
        """Bregman geometry of the adaptation law, Euclidean for gd"""
        if self.preconditioned:
            return self.mirror_actuator, self.mirror_sensor
        return (MirrorMapEN.euclidean(self.mirror_actuator.columns),
                MirrorMapEN.euclidean(self.mirror_sensor.columns))


@dataclass(frozen=True)
class ObserverState:
    x_hat: np.ndarray
    W_a: np.ndarray
    W_s: np.ndarray
    params: ObserverParams
    time_s: float = 0.0
    guard_hits: int = 0

    def __post_init__(self):
        p = self.params
        check_vector("x_hat", self.x_hat, p.model.state_dim)
        if self.W_a.shape != (p.actuator_features.n_features, p.model.actuator_fault_count):
            raise InvalidArgumentError(f"W_a has shape {self.W_a.shape}")
        if self.W_s.shape != (p.sensor_features.n_features, p.model.output_dim):
            raise InvalidArgumentError(f"W_s has shape {self.W_s.shape}")

    def pack(self) -> np.ndarray:
        return np.concatenate([self.x_hat, self.W_a.ravel(), self.W_s.ravel()])

    def unpack(self, vec: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = self.x_hat.size
        split = n + self.W_a.size
        return vec[:n], vec[n:split].reshape(self.W_a.shape), vec[split:].reshape(self.W_s.shape)


@dataclass(frozen=True)
class AdaptationSignals:
    residual: np.ndarray
    sensitivity: np.ndarray
    fa_hat: np.ndarray
    fs_hat: np.ndarray

    @property
    def loss(self) -> float:
        return 0.5 * float(self.residual @ self.residual)


def initial_observer_state(params: ObserverParams, x_hat0, weight_init: str = "trained") -> ObserverState:
    """Start from the offline last layers or from zero weights"""
    x_hat0 = check_vector("x_hat0", x_hat0, params.model.state_dim).copy()
    if weight_init == "trained":
        W_a = np.array(params.actuator_features.last_layer_init, dtype=float)
        W_s = np.array(params.sensor_features.last_layer_init, dtype=float)
    elif weight_init == "zero":
        W_a = np.zeros((params.actuator_features.n_features, params.model.actuator_fault_count))
        W_s = np.zeros((params.sensor_features.n_features, params.model.output_dim))
    else:
        raise InvalidArgumentError(f"unknown weight_init '{weight_init}'")
    return ObserverState(x_hat0, W_a, W_s, params)


def observer_signals(params: ObserverParams, x_hat, W_a, W_s, y, u) -> Tuple[AdaptationSignals, np.ndarray, np.ndarray]:
    """Signals plus the feature vectors phi_a, phi_s at one point"""
    model = params.model
    phi_a = params.actuator_features(x_hat, u)
    phi_s = params.sensor_features(x_hat, u)
    fa_hat = W_a.T @ phi_a
    fs_hat = W_s.T @ phi_s
    residual = y - (model.output_map(x_hat) + fs_hat)
    sensitivity = params.sensitivity_sign * (
        model.actuator_fault_matrix(x_hat).T @ (params.metric @ (params.gain @ residual))
    )
    return AdaptationSignals(residual, sensitivity, fa_hat, fs_hat), phi_a, phi_s


def observer_rates(
    params: ObserverParams, x_hat, W_a, W_s, y, u, precondition: Optional[bool] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, AdaptationSignals]:
    """Right-hand side of the stacked (x_hat, W_a, W_s) system"""
    if precondition is None:
        precondition = params.preconditioned
    model = params.model
    sig, phi_a, phi_s = observer_signals(params, x_hat, W_a, W_s, y, u)

    x_dot = model.drift(x_hat) + model.control_matrix(x_hat) @ u + params.gain @ sig.residual
    if model.actuator_fault_count:
        x_dot = x_dot + model.actuator_fault_matrix(x_hat) @ sig.fa_hat

    grad_a = np.outer(phi_a, sig.sensitivity)
    grad_s = np.outer(phi_s, sig.residual)
    if precondition:
        grad_a = solve_hessian_blocks(params.mirror_actuator, W_a, grad_a)
        grad_s = solve_hessian_blocks(params.mirror_sensor, W_s, grad_s)
    W_a_dot = -grad_a * params.gamma_actuator - params.sigma_actuator * W_a
    W_s_dot = grad_s * params.gamma_sensor - params.sigma_sensor * W_s
    return x_dot, W_a_dot, W_s_dot, sig


def _clamp_columns(W: np.ndarray, radius: float) -> Tuple[np.ndarray, int]:
    norms = np.linalg.norm(W, axis=0)
    over = norms > radius
    if not np.any(over):
        return W, 0
    W = W.copy()
    W[:, over] *= radius / norms[over]
    return W, int(np.sum(over))


def observer_step(
    state: ObserverState, y, u, dt: float, precondition: Optional[bool] = None,
) -> Tuple[ObserverState, AdaptationSignals]:
    """
    One RK4 step of the stacked observer

    y is either one measurement held over the step or the four measurements
    at the RK4 stage times, shape (4, p). The returned signals belong to the
    start of the step.

    Raises:
        ObserverDivergedError: non-finite state after the step
    """
    if dt <= 0.0:
        raise InvalidArgumentError("dt must be positive")
    params = state.params
    p = params.model.output_dim
    y = np.asarray(y, dtype=float)
    if y.shape not in ((p,), (4, p)):
        raise InvalidArgumentError(f"measurement must have shape ({p},) or (4, {p}), got {y.shape}")
    u = check_vector("u", u, params.model.input_dim)
    staged = y.ndim == 2
    signals: List[AdaptationSignals] = []

    def rhs(stage, t, vec):
        x_hat, W_a, W_s = state.unpack(vec)
        x_dot, W_a_dot, W_s_dot, sig = observer_rates(
            params, x_hat, W_a, W_s, y[stage] if staged else y, u, precondition
        )
        if stage == 0:
            signals.append(sig)
        return np.concatenate([x_dot, W_a_dot.ravel(), W_s_dot.ravel()])

    with np.errstate(over="ignore", invalid="ignore"):
        vec, _ = rk4_step(rhs, state.time_s, state.pack(), dt)
    t_next = state.time_s + dt
    if not np.all(np.isfinite(vec)):
        logger.error(f"{params.kind} observer diverged at t={t_next:.4f} s")
        raise ObserverDivergedError(t_next, "non-finite observer state")

    x_hat, W_a, W_s = state.unpack(vec)
    W_a, hits_a = _clamp_columns(W_a, params.guard_radius)
    W_s, hits_s = _clamp_columns(W_s, params.guard_radius)
    if hits_a or hits_s:
        logger.warning(f"{params.kind} observer weight guard active at t={t_next:.4f} s ({hits_a + hits_s} columns)")
    new_state = replace(
        state, x_hat=x_hat, W_a=W_a, W_s=W_s, time_s=t_next,
        guard_hits=state.guard_hits + hits_a + hits_s,
    )
    return new_state, signals[0]


def gd_baseline_step(state: ObserverState, y, u, dt: float) -> Tuple[ObserverState, AdaptationSignals]:
    """observer_step with identity Hessian blocks"""
    return observer_step(state, y, u, dt, precondition=False)


def advance(state: ObserverState, y, u, dt: float) -> Tuple[ObserverState, AdaptationSignals]:
    """Step with the law matching the observer's kind"""
    if state.params.preconditioned:
        return observer_step(state, y, u, dt)
    return gd_baseline_step(state, y, u, dt)


@dataclass(frozen=True)
class MetricDesign:
    """Constant contraction metric M, gain L and the verified rate"""
    metric: np.ndarray
    gain: np.ndarray
    rate: float
    spectral_abscissa: float
    samples_checked: int = 1
    lambda_target: float = 1.0
    notes: List[str] = field(default_factory=list)
    sensitivity_sign: float = 1.0
    actuator_sensitivity: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))


def contraction_rate(A_L: np.ndarray, M: np.ndarray) -> float:
    """Largest lambda with A_L^T M + M A_L <= -2 lambda M"""
    sym = A_L.T @ M + M @ A_L
    return -0.5 * float(np.max(linalg.eigh(sym, M, eigvals_only=True)))


def actuator_sensitivity(A_L: np.ndarray, C: np.ndarray, Gf: np.ndarray, M: np.ndarray, L: np.ndarray) -> np.ndarray:
    """Steady-state map from a constant actuator-fault error to z at s = +1"""
    if Gf.shape[1] == 0:
        return np.zeros((0, 0))
    return -Gf.T @ M @ L @ C @ np.linalg.solve(A_L, Gf)


def _sign_from_sensitivity(J: np.ndarray) -> float:
    return -1.0 if J.size and float(np.trace(J)) > 0.0 else 1.0


def rate_gains(
    design: MetricDesign,
    actuator_features: FeatureMap,
    sensor_features: FeatureMap,
    points: Sequence[Tuple[np.ndarray, np.ndarray]],
    actuator_rate: float,
    sensor_rate: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Adaptation gains that realise the requested quasi-static rates (1/s)

    Gamma_a,i = rate_a / (|J_ii| E||phi_a||^2) and
    Gamma_s = rate_s / E||phi_s||^2, with the feature energy averaged over
    the (x, u) points.

    Raises:
        DesignInfeasibleError: a channel has no sensitivity or no feature energy
    """
    if not points:
        raise InvalidArgumentError("rate_gains needs at least one (x, u) point")
    if actuator_rate < 0.0 or sensor_rate < 0.0:
        raise InvalidArgumentError("adaptation rates must be non-negative")
    Z = np.array([np.concatenate([np.ravel(x), np.ravel(u)]) for x, u in points], dtype=float)
    energy_a = float(np.mean(np.sum(actuator_features.evaluate_batch(Z) ** 2, axis=1)))
    energy_s = float(np.mean(np.sum(sensor_features.evaluate_batch(Z) ** 2, axis=1)))
    if energy_a <= 0.0 or energy_s <= 0.0:
        raise DesignInfeasibleError("features vanish at every design point")

    loop = np.abs(np.diag(design.actuator_sensitivity))
    if np.any(loop == 0.0):
        dead = [i + 1 for i in np.flatnonzero(loop == 0.0)]
        raise DesignInfeasibleError(f"actuator channels {dead} do not reach the residual")
    gamma_a = actuator_rate / (loop * energy_a)
    gamma_s = np.full(sensor_features.output_dim, sensor_rate / energy_s)
    logger.info(
        f"Rate gains: actuator {np.array2string(gamma_a, precision=4)}, sensor {gamma_s[0]:.4g}"
    )
    return gamma_a, gamma_s


def _check_detectable(A: np.ndarray, C: np.ndarray, lambda_target: float):
    n = A.shape[0]
    for mode in np.linalg.eigvals(A):
        if mode.real < -lambda_target:
            continue
        pencil = np.vstack([mode * np.eye(n) - A, C])
        if np.linalg.matrix_rank(pencil, tol=1e-9 * max(1.0, np.linalg.norm(pencil))) < n:
            logger.error(f"Mode {mode:.4g} is unobservable")
            raise DesignInfeasibleError(
                f"linearization is not detectable at rate {lambda_target}: mode {mode:.4g} is unobservable"
            )


def design_metric_and_gain(
    model: SystemModel,
    x_op,
    u_op,
    lambda_target: float = 1.0,
    gain=None,
    poles: Optional[Sequence[float]] = None,
    state_weight: float = 1.0,
    output_weight: float = 0.1,
    q_scale: float = 1e-2,
    samples: Optional[Iterable[Tuple[np.ndarray, np.ndarray]]] = None,
) -> MetricDesign:
    """
    Observer gain and constant metric from the linearization at (x_op, u_op)

    L comes from an explicit gain, a pole placement or, by default, a
    Riccati design on A + lambda I. M solves
    (A_L + lambda I)^T M + M (A_L + lambda I) = -q I. The contraction
    inequality is then checked at the operating point and every sample.

    Raises:
        DesignInfeasibleError: undetectable pair or gain too slow
        MetricVerificationError: rate not positive at some sample
    """
    if lambda_target <= 0.0:
        raise InvalidArgumentError("lambda_target must be positive")
    x_op = check_vector("x_op", x_op, model.state_dim)
    u_op = check_vector("u_op", u_op, model.input_dim)
    A, C = linearize(model, x_op, u_op)
    n = model.state_dim
    shifted = A + lambda_target * np.eye(n)

    if gain is not None:
        L = np.asarray(gain, dtype=float).reshape(n, model.output_dim)
        method = "explicit"
    else:
        _check_detectable(A, C, lambda_target)
        if poles is not None:
            L = signal.place_poles(A.T, C.T, np.asarray(poles, dtype=float)).gain_matrix.T
            method = "poles"
        else:
            X = linalg.solve_continuous_are(
                shifted.T, C.T, state_weight * np.eye(n), output_weight * np.eye(model.output_dim)
            )
            L = X @ C.T / output_weight
            method = "riccati"

    A_L = A - L @ C
    abscissa = float(np.max(np.linalg.eigvals(A_L).real))
    if abscissa >= -lambda_target:
        logger.error(f"Gain ({method}) has spectral abscissa {abscissa:.4g} >= {-lambda_target:.4g}")
        raise DesignInfeasibleError(
            f"observer gain gives spectral abscissa {abscissa:.4g}, need < {-lambda_target:.4g}"
        )
    M = linalg.solve_continuous_lyapunov((A_L + lambda_target * np.eye(n)).T, -q_scale * np.eye(n))
    M = 0.5 * (M + M.T)

    J = actuator_sensitivity(A_L, C, model.actuator_fault_matrix(x_op), M, L)
    sign = _sign_from_sensitivity(J)

    points = [(x_op, u_op)] + [(np.asarray(x, float), np.asarray(u, float)) for x, u in (samples or [])]
    rates, violating, flips = [], [], 0
    for x, u in points:
        A_x, C_x = linearize(model, x, u)
        rate = contraction_rate(A_x - L @ C_x, M)
        rates.append(rate)
        if rate <= 0.0:
            violating.append(x)
            continue
        J_x = actuator_sensitivity(A_x - L @ C_x, C_x, model.actuator_fault_matrix(x), M, L)
        flips += _sign_from_sensitivity(J_x) != sign
    if violating:
        logger.error(f"Contraction inequality fails at {len(violating)} of {len(points)} states")
        raise MetricVerificationError(
            f"contraction rate not positive at {len(violating)} sampled states", violating
        )
    notes = [method]
    if flips:
        logger.warning(f"Actuator sensitivity changes sign at {flips} of {len(points)} states")
        notes.append(f"sensitivity sign flips at {flips} states")
    design = MetricDesign(M, L, min(rates), abscissa, len(points), lambda_target, notes, sign, J)
    logger.info(
        f"Designed {method} gain: abscissa={abscissa:.4g} rate={design.rate:.4g} "
        f"sensitivity sign={sign:+.0f} over {len(points)} states"
    )
    return design


def design_xi_from_angles(theta_lb, xi_range: Sequence[float]) -> np.ndarray:
    """
    Curvature per channel, affine and decreasing in the angle lower bound

    theta = pi/2 maps to xi_min, theta = 0 to xi_max.
    """
    theta = np.atleast_1d(np.asarray(theta_lb, dtype=float))
    if len(xi_range) != 2:
        raise InvalidArgumentError("xi_range must be [xi_min, xi_max]")
    xi_min, xi_max = float(xi_range[0]), float(xi_range[1])
    if not 0.0 < xi_min < xi_max:
        raise InvalidArgumentError("xi_range needs 0 < xi_min < xi_max")
    if np.any(theta < -1e-12) or np.any(theta > math.pi / 2 + 1e-12) or not np.all(np.isfinite(theta)):
        raise InvalidArgumentError("angle lower bounds must lie in [0, pi/2]")
    fraction = np.clip(theta / (math.pi / 2), 0.0, 1.0)
    return xi_min + (xi_max - xi_min) * (1.0 - fraction)
