"""
Fault signature subspaces, principal angles and isolability
"""
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger
from scipy import linalg

from faultflow.config import (
    ANGLE_FLOOR_RAD, LIE_STEP, RANK_RTOL, RELATIVE_DEGREE_MAX, RELATIVE_DEGREE_TOL, SIGNATURE_RTOL,
)
from faultflow.errors import (
    InvalidArgumentError, IsolabilityViolationError, NumericalDomainError, RelativeDegreeError,
)
from faultflow.models.report import ChannelAngles, IsolabilityReport
from faultflow.services.system_model import SystemModel, check_vector
from faultflow.utils.numerics import central_jacobian, directional_derivative

HALF_PI = math.pi / 2.0


@dataclass(frozen=True)
class Channel:
    """Fault channel identity; index is 0-based"""
    kind: str
    index: int

    def __post_init__(self):
        if self.kind not in ("actuator", "sensor") or self.index < 0:
            raise InvalidArgumentError(f"invalid channel {self.kind}/{self.index}")

    @property
    def label(self) -> str:
        return f"{self.kind}_{self.index + 1}"


@dataclass(frozen=True)
class DiffMapJacobians:
    """First-order variation of the stacked output derivatives y, y', ..., y^(R)"""
    order: int
    output_dim: int
    C_R: np.ndarray
    F_a: np.ndarray
    E_s: np.ndarray
    x_star: np.ndarray
    u_star: np.ndarray

    def __post_init__(self):
        rows = self.output_dim * (self.order + 1)
        for name in ("C_R", "F_a", "E_s"):
            if getattr(self, name).shape[0] != rows:
                raise InvalidArgumentError(f"{name} must have {rows} rows")

    @property
    def rows(self) -> int:
        return self.output_dim * (self.order + 1)

    @property
    def zero_tolerance(self) -> float:
        """Singular values at or below this are finite-difference noise"""
        stacked = np.hstack([self.C_R, self.F_a, self.E_s])
        return SIGNATURE_RTOL * float(np.linalg.norm(stacked, 2)) if stacked.size else 0.0

    @property
    def channels(self) -> List[Channel]:
        return ([Channel("actuator", i) for i in range(self.F_a.shape[1])]
                + [Channel("sensor", j) for j in range(self.E_s.shape[1])])

    def signature(self, channel: Channel) -> np.ndarray:
        source = self.F_a if channel.kind == "actuator" else self.E_s
        if channel.index >= source.shape[1]:
            raise InvalidArgumentError(f"unknown channel {channel.label}")
        return source[:, [channel.index]]


@dataclass(frozen=True)
class SubspaceBasis:
    """Orthonormal basis (columns) of a subspace of R^N"""
    basis: np.ndarray
    label: str = ""

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T


def _lie_chain(model: SystemModel, field_map, order: int, step: float):
    chain = [model.output_map]
    for _ in range(order):
        chain.append(directional_derivative(chain[-1], field_map, step))
    return chain


def relative_degrees(
    model: SystemModel,
    x_star,
    r_max: int = RELATIVE_DEGREE_MAX,
    tol: float = RELATIVE_DEGREE_TOL,
    step: float = LIE_STEP,
) -> Tuple[List[int], int]:
    """
    Per-output relative degrees at x_star and their maximum R

    r_l is the smallest r with |L_gk L_f^(r-1) h_l(x*)| > tol (1 + ||x*||)
    for some input k.

    Raises:
        RelativeDegreeError: an output has no relative degree <= r_max
    """
    x_star = check_vector("x_star", x_star, model.state_dim)
    threshold = tol * (1.0 + np.linalg.norm(x_star))
    degrees: List[Optional[int]] = [None] * model.output_dim
    current = model.output_map
    for r in range(1, r_max + 1):
        hits = np.zeros(model.output_dim, dtype=bool)
        for k in range(model.input_dim):
            value = directional_derivative(current, model.control_field(k), step)(x_star)
            hits |= np.abs(value) > threshold
        for l in range(model.output_dim):
            if degrees[l] is None and hits[l]:
                degrees[l] = r
        if all(d is not None for d in degrees):
            return degrees, max(degrees)
        current = directional_derivative(current, model.drift, step)
    missing = next(l for l, d in enumerate(degrees) if d is None)
    raise RelativeDegreeError(missing, r_max)


def diffmap_jacobians(model: SystemModel, x_star, u_star, order: int, step: float = LIE_STEP) -> DiffMapJacobians:
    """
    Jacobians of the order-R output differential map at (x*, u*, f=0)

    Fault signals are frozen constants, so sensor columns are [e_j; 0; ...; 0].
    Actuator columns are central differences in the fault amplitude, exact
    while the stacked map is at most quadratic in it (R <= 2).
    """
    if order < 1:
        raise InvalidArgumentError("order must be >= 1")
    x_star = check_vector("x_star", x_star, model.state_dim)
    u_star = check_vector("u_star", u_star, model.input_dim)
    p = model.output_dim
    q_a = model.actuator_fault_count

    def stacked(fa: np.ndarray):
        def vector_field(x):
            v = model.drift(x) + model.control_matrix(x) @ u_star
            return v + model.actuator_fault_matrix(x) @ fa if q_a else v

        chain = _lie_chain(model, vector_field, order, step)
        return lambda x: np.concatenate([np.asarray(c(x), dtype=float) for c in chain])

    c_r = central_jacobian(stacked(np.zeros(q_a)), x_star, step)
    c_r[:p] = model.output_jacobian_at(x_star)

    f_a = np.zeros((p * (order + 1), q_a))
    for i in range(q_a):
        delta = np.zeros(q_a)
        delta[i] = step
        f_a[:, i] = (stacked(delta)(x_star) - stacked(-delta)(x_star)) / (2.0 * step)
    f_a[:p] = 0.0

    e_s = np.zeros((p * (order + 1), model.sensor_fault_count))
    e_s[:p] = model.sensor_fault_dirs

    if not (np.all(np.isfinite(c_r)) and np.all(np.isfinite(f_a))):
        raise NumericalDomainError(f"non-finite Lie derivative at x*={x_star}")
    return DiffMapJacobians(order, p, c_r, f_a, e_s, x_star, u_star)


def orthonormalize(M, label: str = "", rtol: float = RANK_RTOL, atol: float = 0.0) -> SubspaceBasis:
    """
    Orthonormal basis of range(M)

    Singular values at or below max(rtol * s_max, atol) are dropped, so a
    matrix with spectral norm at or below atol has an empty basis.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    if M.shape[1] == 0 or not np.any(M):
        return SubspaceBasis(np.zeros((M.shape[0], 0)), label)
    u, s, _ = linalg.svd(M, full_matrices=False)
    rank = int(np.sum(s > max(rtol * s[0], atol)))
    return SubspaceBasis(u[:, :rank], label)


def principal_angles(U: SubspaceBasis, V: SubspaceBasis) -> np.ndarray:
    """
    Principal angles between two subspaces, ascending, in [0, pi/2]

    With V the smaller basis, cosines are the singular values of U^T V and
    sines those of (I - U U^T) V. Pairing them through arctan2 keeps full
    accuracy at both ends of the range.

    Raises:
        InvalidArgumentError: empty subspace or ambient dimension mismatch
    """
    if U.ambient_dim != V.ambient_dim:
        raise InvalidArgumentError(
            f"ambient dimensions differ: {U.ambient_dim} vs {V.ambient_dim}"
        )
    if U.rank == 0 or V.rank == 0:
        raise InvalidArgumentError("principal angles need nonempty subspaces")
    Qu, Qv = (U.basis, V.basis) if U.rank >= V.rank else (V.basis, U.basis)
    overlap = Qu.T @ Qv
    cosines = np.sort(np.clip(linalg.svd(overlap, compute_uv=False), 0.0, 1.0))[::-1]
    sines = np.sort(np.clip(linalg.svd(Qv - Qu @ overlap, compute_uv=False), 0.0, 1.0))
    return np.clip(np.arctan2(sines, cosines), 0.0, HALF_PI)


def residue_subspace(jac: DiffMapJacobians, channel: Channel) -> SubspaceBasis:
    """Span of every other channel's signature"""
    jac.signature(channel)
    columns = [jac.signature(c) for c in jac.channels if c != channel]
    stacked = np.hstack(columns) if columns else np.zeros((jac.rows, 0))
    return orthonormalize(stacked, label=f"residue_of_{channel.label}", atol=jac.zero_tolerance)


def _channel_angles(jac: DiffMapJacobians, channel: Channel, nominal: SubspaceBasis):
    signature = orthonormalize(jac.signature(channel), label=channel.label, atol=jac.zero_tolerance)
    residue = residue_subspace(jac, channel)
    if signature.rank == 0:
        logger.warning(f"{channel.label} has a vanishing signature at x*={jac.x_star}")
        angles = np.zeros(1)
    elif residue.rank == 0:
        angles = np.array([HALF_PI])
    else:
        angles = principal_angles(signature, residue)
    nominal_angle = None
    if signature.rank and nominal.rank:
        nominal_angle = float(principal_angles(signature, nominal)[0])
    return signature, residue, angles, nominal_angle


def isolability_report(jac: DiffMapJacobians, angle_floor: float = ANGLE_FLOOR_RAD) -> IsolabilityReport:
    """Minimal principal angle of each channel against its residue subspace"""
    channels = jac.channels
    if not channels:
        raise InvalidArgumentError("model has no fault channels")
    nominal = orthonormalize(jac.C_R, label="nominal", atol=jac.zero_tolerance)
    entries = []
    for channel in channels:
        signature, residue, angles, nominal_angle = _channel_angles(jac, channel, nominal)
        theta = float(angles[0])
        entries.append(ChannelAngles(
            channel=channel.label,
            kind=channel.kind,
            index=channel.index,
            theta_min_rad=theta,
            angles_rad=[float(a) for a in angles],
            isolable=theta > angle_floor,
            signature_dim=signature.rank,
            residue_dim=residue.rank,
            nominal_angle_rad=nominal_angle,
        ))
    return IsolabilityReport(
        order=jac.order,
        eval_state=jac.x_star.tolist(),
        eval_input=jac.u_star.tolist(),
        angle_floor_rad=angle_floor,
        channels=entries,
    )


def isolating_projector(
    jac: DiffMapJacobians,
    channel: Channel,
    angle_floor: float = ANGLE_FLOOR_RAD,
    reduced: bool = False,
) -> np.ndarray:
    """
    Static isolating map H for one channel

    H annihilates the residue subspace and is injective on the channel's
    signature. The full projector I - QQ^T is returned, or with reduced=True
    the rows of an orthonormal basis of the residue's complement.

    Raises:
        IsolabilityViolationError: channel not isolable at this point
    """
    nominal = SubspaceBasis(np.zeros((jac.rows, 0)))
    signature, residue, angles, _ = _channel_angles(jac, channel, nominal)
    if angles[0] <= angle_floor:
        raise IsolabilityViolationError(
            f"{channel.label} is not isolable: theta_min={angles[0]:.3e} <= {angle_floor:.1e}"
        )
    q = residue.basis
    if reduced:
        h = linalg.null_space(q.T).T if residue.rank else np.eye(jac.rows)
    else:
        h = np.eye(jac.rows) - q @ q.T
    if residue.rank and np.max(np.abs(h @ q)) > 1e-10:
        raise IsolabilityViolationError(f"projector for {channel.label} does not annihilate the residue")
    if np.linalg.matrix_rank(h @ signature.basis) != signature.rank:
        raise IsolabilityViolationError(f"projector for {channel.label} loses signature rank")
    return h


@dataclass
class AngleProfile:
    """Minimal principal angle per channel along sampled trajectory points"""
    channels: List[str]
    sample_indices: np.ndarray
    times: Optional[np.ndarray]
    theta_min: np.ndarray
    skipped: List[int] = field(default_factory=list)
    reports: List[IsolabilityReport] = field(default_factory=list)

    @property
    def lower_bounds(self) -> Dict[str, float]:
        return {c: float(v) for c, v in zip(self.channels, self.theta_min.min(axis=0))}

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.theta_min, columns=[f"theta_{c}" for c in self.channels])
        frame.insert(0, "sample", self.sample_indices)
        if self.times is not None:
            frame.insert(1, "time_s", self.times)
        return frame


def angle_profile(
    model: SystemModel,
    states: Sequence[np.ndarray],
    inputs: Sequence[np.ndarray],
    order: int,
    angle_floor: float = ANGLE_FLOOR_RAD,
    times: Optional[Sequence[float]] = None,
    r_max: int = RELATIVE_DEGREE_MAX,
) -> AngleProfile:
    """
    Pointwise isolability along a trajectory

    Samples where the relative degree is undefined or exceeds the order are
    skipped with a warning. The lower bounds are the per-channel minima.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if states.shape[0] == 0 or states.shape[0] != inputs.shape[0]:
        raise InvalidArgumentError("trajectory must be nonempty with one input per state")

    kept, rows, reports, skipped = [], [], [], []
    for k, (x, u) in enumerate(zip(states, inputs)):
        try:
            _, degree = relative_degrees(model, x, r_max=r_max)
        except RelativeDegreeError as e:
            logger.warning(f"Skipping sample {k}: {e}")
            skipped.append(k)
            continue
        if degree > order:
            logger.warning(f"Skipping sample {k}: relative degree {degree} exceeds order {order}")
            skipped.append(k)
            continue
        report = isolability_report(diffmap_jacobians(model, x, u, order), angle_floor)
        kept.append(k)
        rows.append([c.theta_min_rad for c in report.channels])
        reports.append(report)

    if not kept:
        raise InvalidArgumentError("every trajectory sample was skipped")
    labels = [c.channel for c in reports[0].channels]
    sample_times = None if times is None else np.asarray(times, dtype=float)[kept]
    logger.info(f"Angle profile over {len(kept)} samples ({len(skipped)} skipped)")
    return AngleProfile(labels, np.asarray(kept), sample_times, np.asarray(rows), skipped, reports)
