"""
Fixed-step integration and finite differences
"""
from typing import Callable, List, Tuple

import numpy as np

from faultflow.config import JACOBIAN_STEP

# RK4 stage time offsets as fractions of dt
RK4_STAGE_OFFSETS = (0.0, 0.5, 0.5, 1.0)


def rk4_step(
    rhs: Callable[[int, float, np.ndarray], np.ndarray],
    t: float,
    y: np.ndarray,
    dt: float,
) -> Tuple[np.ndarray, List[np.ndarray]]:
    """
    Classical fourth-order Runge-Kutta step

    Args:
        rhs: Right-hand side called as rhs(stage, t_stage, y_stage)
        t: Step start time
        y: State at t
        dt: Step size

    Returns:
        State at t + dt and the four stage states
    """
    s1 = y
    k1 = rhs(0, t, s1)
    s2 = y + 0.5 * dt * k1
    k2 = rhs(1, t + 0.5 * dt, s2)
    s3 = y + 0.5 * dt * k2
    k3 = rhs(2, t + 0.5 * dt, s3)
    s4 = y + dt * k3
    k4 = rhs(3, t + dt, s4)
    y_next = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y_next, [s1, s2, s3, s4]


def central_jacobian(
    fn: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    step: float = JACOBIAN_STEP,
) -> np.ndarray:
    """Central finite-difference Jacobian with step scaled by 1 + ||x||"""
    x = np.asarray(x, dtype=float)
    h = step * (1.0 + np.linalg.norm(x))
    f0 = np.asarray(fn(x), dtype=float)
    jac = np.empty((f0.size, x.size))
    for k in range(x.size):
        dx = np.zeros_like(x)
        dx[k] = h
        jac[:, k] = (np.asarray(fn(x + dx)) - np.asarray(fn(x - dx))).ravel() / (2.0 * h)
    return jac


def directional_derivative(
    fn: Callable[[np.ndarray], np.ndarray],
    field: Callable[[np.ndarray], np.ndarray],
    step: float,
) -> Callable[[np.ndarray], np.ndarray]:
    """
    Lie derivative of fn along field, evaluated by a central difference

    The displacement along field(x) has length step * (1 + ||x||).
    """

    def derivative(x: np.ndarray) -> np.ndarray:
        v = np.asarray(field(x), dtype=float)
        speed = np.linalg.norm(v)
        if speed == 0.0:
            return np.zeros_like(np.asarray(fn(x), dtype=float))
        s = step * (1.0 + np.linalg.norm(x)) / speed
        return (np.asarray(fn(x + s * v)) - np.asarray(fn(x - s * v))) / (2.0 * s)

    return derivative
