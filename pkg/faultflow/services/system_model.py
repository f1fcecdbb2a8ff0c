"""
Control-affine system models and the reaction-wheel spacecraft instance
"""
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

from faultflow.errors import InvalidArgumentError, NumericalDomainError
from faultflow.models.scenario import PYRAMID_ELEVATION_RAD
from faultflow.utils.numerics import central_jacobian

VectorMap = Callable[[np.ndarray], np.ndarray]


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def check_vector(name: str, v, dim: int) -> np.ndarray:
    """Coerce v to a float vector of length dim"""
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1 or arr.shape[0] != dim:
        raise InvalidArgumentError(f"{name} must have shape ({dim},), got {arr.shape}")
    return arr


@dataclass(frozen=True)
class SystemModel:
    """
    Control-affine plant

        x' = f(x) + G(x) u + Gf(x) fa + d
        y  = h(x) + E fs

    G and Gf are matrix-valued maps whose columns are the control fields g_k
    and the actuator fault fields g_i^f. E holds the sensor fault directions
    e_j as columns.
    """
    state_dim: int
    input_dim: int
    output_dim: int
    drift: VectorMap
    control_matrix: VectorMap
    actuator_fault_matrix: VectorMap
    output_map: VectorMap
    sensor_fault_dirs: np.ndarray
    actuator_fault_count: int
    drift_jacobian: Optional[VectorMap] = None
    output_jacobian: Optional[VectorMap] = None
    control_jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "system"

    def __post_init__(self):
        for label in ("state_dim", "input_dim", "output_dim"):
            if getattr(self, label) < 1:
                raise InvalidArgumentError(f"{label} must be positive")
        if self.actuator_fault_count < 0:
            raise InvalidArgumentError("actuator_fault_count must be non-negative")
        dirs = np.array(self.sensor_fault_dirs, dtype=float)
        if dirs.size == 0:
            dirs = np.zeros((self.output_dim, 0))
        if dirs.ndim != 2 or dirs.shape[0] != self.output_dim:
            raise InvalidArgumentError(
                f"sensor_fault_dirs must be ({self.output_dim}, q_s), got {dirs.shape}"
            )
        if dirs.shape[1] and np.any(np.linalg.norm(dirs, axis=0) == 0.0):
            raise InvalidArgumentError("sensor fault directions must be nonzero")
        object.__setattr__(self, "sensor_fault_dirs", _readonly(dirs))

    @property
    def sensor_fault_count(self) -> int:
        return self.sensor_fault_dirs.shape[1]

    def control_field(self, k: int) -> VectorMap:
        return lambda x: self.control_matrix(x)[:, k]

    def actuator_fault_field(self, i: int) -> VectorMap:
        return lambda x: self.actuator_fault_matrix(x)[:, i]

    def drift_jacobian_at(self, x: np.ndarray) -> np.ndarray:
        if self.drift_jacobian is not None:
            return np.asarray(self.drift_jacobian(x), dtype=float)
        return central_jacobian(self.drift, x)

    def output_jacobian_at(self, x: np.ndarray) -> np.ndarray:
        if self.output_jacobian is not None:
            return np.asarray(self.output_jacobian(x), dtype=float)
        return central_jacobian(self.output_map, x)


def eval_dynamics(model: SystemModel, x, u, fa=None, d=None) -> np.ndarray:
    """
    State derivative f(x) + G(x)u + Gf(x)fa + d

    Raises:
        InvalidArgumentError: dimension mismatch
        NumericalDomainError: non-finite evaluation
    """
    x = check_vector("x", x, model.state_dim)
    u = check_vector("u", u, model.input_dim)
    xdot = model.drift(x) + model.control_matrix(x) @ u
    if fa is not None:
        fa = check_vector("fa", fa, model.actuator_fault_count)
        if fa.size:
            xdot = xdot + model.actuator_fault_matrix(x) @ fa
    if d is not None:
        xdot = xdot + check_vector("d", d, model.state_dim)
    if not np.all(np.isfinite(xdot)):
        raise NumericalDomainError(f"non-finite state derivative at x={x}")
    return xdot


def eval_output(model: SystemModel, x, fs=None) -> np.ndarray:
    """Measured output h(x) + sum_j e_j fs_j"""
    x = check_vector("x", x, model.state_dim)
    y = np.asarray(model.output_map(x), dtype=float)
    if fs is not None:
        fs = check_vector("fs", fs, model.sensor_fault_count)
        if fs.size:
            y = y + model.sensor_fault_dirs @ fs
    return y


def linearize(model: SystemModel, x, u) -> Tuple[np.ndarray, np.ndarray]:
    """Return (A, C) of the fault-free plant at (x, u)"""
    x = check_vector("x", x, model.state_dim)
    u = check_vector("u", u, model.input_dim)
    a = model.drift_jacobian_at(x)
    if model.control_jacobian is not None:
        a = a + np.einsum("ikj,k->ij", model.control_jacobian(x), u)
    elif np.any(u):
        a = a + central_jacobian(lambda z: model.control_matrix(z) @ u, x)
    return a, model.output_jacobian_at(x)


def linear_model(A, B, C, Bf=None, E=None, name: str = "linear") -> SystemModel:
    """LTI plant with constant fields and analytic Jacobians"""
    A = _readonly(A)
    B = _readonly(np.atleast_2d(B))
    C = _readonly(np.atleast_2d(C))
    n = A.shape[0]
    if A.shape != (n, n) or B.shape[0] != n or C.shape[1] != n:
        raise InvalidArgumentError("inconsistent A, B, C shapes")
    Bf = _readonly(np.zeros((n, 0)) if Bf is None else np.reshape(Bf, (n, -1)))
    E = np.zeros((C.shape[0], 0)) if E is None else np.reshape(E, (C.shape[0], -1))
    m = B.shape[1]
    return SystemModel(
        state_dim=n,
        input_dim=m,
        output_dim=C.shape[0],
        drift=lambda x: A @ x,
        control_matrix=lambda x: B,
        actuator_fault_matrix=lambda x: Bf,
        output_map=lambda x: C @ x,
        sensor_fault_dirs=E,
        actuator_fault_count=Bf.shape[1],
        drift_jacobian=lambda x: A,
        output_jacobian=lambda x: C,
        control_jacobian=lambda x: np.zeros((n, m, n)),
        name=name,
    )


def pyramid_wheel_config(elevation_rad: float = PYRAMID_ELEVATION_RAD) -> np.ndarray:
    """Four wheels at 90 deg azimuth spacing tilted by elevation; unit columns"""
    cb, sb = math.cos(elevation_rad), math.sin(elevation_rad)
    return np.array([
        [cb, 0.0, -cb, 0.0],
        [0.0, cb, 0.0, -cb],
        [sb, sb, sb, sb],
    ])


@dataclass(frozen=True)
class SpacecraftParams:
    """Rigid spacecraft with a reaction-wheel array and PD gains"""
    inertia: np.ndarray
    wheel_inertia: float
    torque_limit: float
    wheel_config: np.ndarray
    kp: np.ndarray
    kd: np.ndarray
    allocation: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        inertia = _readonly(self.inertia)
        if inertia.shape != (3, 3) or not np.allclose(inertia, inertia.T):
            raise InvalidArgumentError("inertia must be a symmetric 3x3 matrix")
        if np.min(np.linalg.eigvalsh(inertia)) <= 0.0:
            raise InvalidArgumentError("inertia must be positive definite (singular inertia)")
        if self.wheel_inertia <= 0.0:
            raise InvalidArgumentError("wheel_inertia must be positive")
        if self.torque_limit <= 0.0:
            raise InvalidArgumentError("torque_limit must be positive")
        wheels = _readonly(self.wheel_config)
        if wheels.ndim != 2 or wheels.shape[0] != 3 or np.linalg.matrix_rank(wheels) != 3:
            raise InvalidArgumentError("wheel_config must be 3 x k with full row rank")
        object.__setattr__(self, "inertia", inertia)
        object.__setattr__(self, "wheel_config", wheels)
        object.__setattr__(self, "kp", _readonly(self.kp))
        object.__setattr__(self, "kd", _readonly(self.kd))
        object.__setattr__(self, "allocation", _readonly(np.linalg.pinv(wheels)))

    @property
    def wheel_count(self) -> int:
        return self.wheel_config.shape[1]


def default_spacecraft_params() -> SpacecraftParams:
    return SpacecraftParams(
        inertia=np.diag([1.0, 1.0, 0.8]),
        wheel_inertia=0.01,
        torque_limit=0.14,
        wheel_config=pyramid_wheel_config(),
        kp=np.diag([22.5, 18.0, 15.0]),
        kd=np.diag([12.0, 9.0, 7.5]),
    )


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def spacecraft_model(params: SpacecraftParams) -> SystemModel:
    """
    Small-angle attitude dynamics with x = (theta, omega)

        theta' = omega
        I omega' = -omega x I omega + wheel_config (u + fa)

    Outputs are the three attitude angles; each wheel is an actuator fault
    channel with g_i^f = g_i and each angle a sensor fault channel.
    """
    inertia = params.inertia
    inv_inertia = np.linalg.inv(inertia)
    k = params.wheel_count
    g = _readonly(np.vstack([np.zeros((3, k)), inv_inertia @ params.wheel_config]))
    c = _readonly(np.hstack([np.eye(3), np.zeros((3, 3))]))

    def drift(x):
        omega = x[3:]
        return np.concatenate([omega, -inv_inertia @ np.cross(omega, inertia @ omega)])

    def drift_jacobian(x):
        omega = x[3:]
        jac = np.zeros((6, 6))
        jac[:3, 3:] = np.eye(3)
        jac[3:, 3:] = -inv_inertia @ (_skew(omega) @ inertia - _skew(inertia @ omega))
        return jac

    return SystemModel(
        state_dim=6,
        input_dim=k,
        output_dim=3,
        drift=drift,
        control_matrix=lambda x: g,
        actuator_fault_matrix=lambda x: g,
        output_map=lambda x: x[:3].copy(),
        sensor_fault_dirs=np.eye(3),
        actuator_fault_count=k,
        drift_jacobian=drift_jacobian,
        output_jacobian=lambda x: c,
        control_jacobian=lambda x: np.zeros((6, k, 6)),
        name="spacecraft",
    )


@dataclass(frozen=True)
class ReferenceTrajectory:
    """Rest-to-rest target attitude with an optional sinusoidal dither"""
    attitude: np.ndarray
    dither_amplitude: np.ndarray = field(default_factory=lambda: np.zeros(3))
    dither_frequency_hz: float = 0.0

    def state(self, t: float) -> np.ndarray:
        theta = np.asarray(self.attitude, dtype=float)
        if self.dither_frequency_hz == 0.0 or not np.any(self.dither_amplitude):
            return np.concatenate([theta, np.zeros(3)])
        w = 2.0 * math.pi * self.dither_frequency_hz
        amp = np.asarray(self.dither_amplitude, dtype=float)
        return np.concatenate([theta + amp * math.sin(w * t), amp * w * math.cos(w * t)])


def body_torque_command(params: SpacecraftParams, x, x_ref) -> np.ndarray:
    """PD attitude law before wheel allocation"""
    x = check_vector("x", x, 6)
    x_ref = check_vector("x_ref", x_ref, 6)
    return -params.kp @ (x[:3] - x_ref[:3]) - params.kd @ (x[3:] - x_ref[3:])


def nominal_controller(params: SpacecraftParams, x, x_ref) -> np.ndarray:
    """Wheel commands: pseudoinverse allocation of the PD torque, clipped per wheel"""
    tau = body_torque_command(params, x, x_ref)
    return np.clip(params.allocation @ tau, -params.torque_limit, params.torque_limit)


def spacecraft_controller(params: SpacecraftParams, reference: ReferenceTrajectory):
    """Closed-loop policy u(t, x) tracking the reference"""

    def policy(t: float, x: np.ndarray) -> np.ndarray:
        return nominal_controller(params, x, reference.state(t))

    return policy


def linear_controller(gain=None, offset=None, limit: Optional[float] = None, *, input_dim: int):
    """Static state feedback u = offset - K x with optional symmetric clipping"""
    offset = np.zeros(input_dim) if offset is None else np.asarray(offset, dtype=float)
    gain = None if gain is None else np.asarray(gain, dtype=float)

    def policy(t: float, x: np.ndarray) -> np.ndarray:
        u = offset if gain is None else offset - gain @ x
        return u if limit is None else np.clip(u, -limit, limit)

    return policy


def angular_momentum(params: SpacecraftParams, x, wheel_momentum=None) -> np.ndarray:
    """Body-frame total angular momentum I omega + h_w"""
    x = check_vector("x", x, 6)
    h = params.inertia @ x[3:]
    if wheel_momentum is not None:
        h = h + check_vector("wheel_momentum", wheel_momentum, 3)
    return h


def wheel_momentum_vector(params: SpacecraftParams, wheel_speeds) -> np.ndarray:
    """Body-frame momentum stored in the wheels, sum_i J_w Omega_i a_i"""
    speeds = check_vector("wheel_speeds", wheel_speeds, params.wheel_count)
    return params.wheel_config @ (params.wheel_inertia * speeds)
