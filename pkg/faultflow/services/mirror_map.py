"""
Elastic-net mirror map over last-layer weight matrices

    psi(W) = sum_j [ beta xi_j / 2 ||w_j||^2 + alpha sqrt(||w_j||^2 + eps) ]

w_j is column j of W. The map is column separable, so its Hessian is block
diagonal with one n_e x n_e block per column.
"""
from dataclasses import dataclass

import numpy as np

from faultflow.errors import InvalidArgumentError


@dataclass(frozen=True)
class MirrorMapEN:
    """Elastic-net mirror map with per-column curvature xi"""
    beta: float
    alpha: float
    eps: float
    xi: np.ndarray

    def __post_init__(self):
        xi = np.array(self.xi, dtype=float).ravel()
        if self.beta <= 0.0 or self.eps <= 0.0 or self.alpha < 0.0:
            raise InvalidArgumentError("mirror map needs beta > 0, eps > 0, alpha >= 0")
        if xi.size == 0 or np.any(xi <= 0.0):
            raise InvalidArgumentError("xi entries must be positive")
        xi.setflags(write=False)
        object.__setattr__(self, "xi", xi)

    @classmethod
    def euclidean(cls, columns: int) -> "MirrorMapEN":
        """psi = 1/2 ||W||_F^2, the geometry of plain gradient descent"""
        return cls(beta=1.0, alpha=0.0, eps=1.0, xi=np.ones(columns))

    @property
    def columns(self) -> int:
        return self.xi.size

    @property
    def strong_convexity(self) -> float:
        return self.beta * float(np.min(self.xi))

    def _check(self, W) -> np.ndarray:
        W = np.asarray(W, dtype=float)
        if W.ndim != 2 or W.shape[1] != self.columns:
            raise InvalidArgumentError(
                f"weight matrix must have {self.columns} columns, got shape {W.shape}"
            )
        return W

    def _smoothed_norms(self, W: np.ndarray) -> np.ndarray:
        return np.sqrt(np.sum(W * W, axis=0) + self.eps)


def mirror_potential(mirror: MirrorMapEN, W) -> float:
    W = mirror._check(W)
    quad = 0.5 * mirror.beta * np.sum(mirror.xi * np.sum(W * W, axis=0))
    return float(quad + mirror.alpha * np.sum(mirror._smoothed_norms(W)))


def mirror_gradient(mirror: MirrorMapEN, W) -> np.ndarray:
    W = mirror._check(W)
    return W * (mirror.beta * mirror.xi + mirror.alpha / mirror._smoothed_norms(W))


def bregman_columns(mirror: MirrorMapEN, W, W_ref) -> np.ndarray:
    """
    Per-column Bregman divergences D(w_j || w_ref_j)

    The quadratic part is evaluated directly on the difference so that
    nearby pairs do not cancel catastrophically.
    """
    W = mirror._check(W)
    W_ref = mirror._check(W_ref)
    if W.shape != W_ref.shape:
        raise InvalidArgumentError(f"shape mismatch {W.shape} vs {W_ref.shape}")
    delta = W - W_ref
    values = 0.5 * mirror.beta * mirror.xi * np.sum(delta * delta, axis=0)
    if mirror.alpha > 0.0:
        s, s_ref = mirror._smoothed_norms(W), mirror._smoothed_norms(W_ref)
        smooth = s - s_ref - np.sum(W_ref * delta, axis=0) / s_ref
        values = values + mirror.alpha * np.maximum(smooth, 0.0)
    return values


def bregman(mirror: MirrorMapEN, W, W_ref) -> float:
    """D_psi(W || W_ref) = psi(W) - psi(W_ref) - <grad psi(W_ref), W - W_ref>"""
    return float(np.sum(bregman_columns(mirror, W, W_ref)))


def mirror_hessian_block(mirror: MirrorMapEN, W, j: int) -> np.ndarray:
    """K_j = beta xi_j I + alpha (I / s - w_j w_j^T / s^3), s = sqrt(||w_j||^2 + eps)"""
    W = mirror._check(W)
    if not 0 <= j < mirror.columns:
        raise InvalidArgumentError(f"column index {j} out of range")
    w = W[:, j]
    s = np.sqrt(w @ w + mirror.eps)
    eye = np.eye(W.shape[0])
    return mirror.beta * mirror.xi[j] * eye + mirror.alpha * (eye / s - np.outer(w, w) / s ** 3)


def solve_hessian_blocks(mirror: MirrorMapEN, W, V) -> np.ndarray:
    """
    Column-wise K_j^{-1} v_j for every column at once

    K_j = a_j I - c_j w_j w_j^T is inverted with the Sherman-Morrison
    identity; a_j - c_j ||w_j||^2 = beta xi_j + alpha eps / s^3 > 0.
    """
    W = mirror._check(W)
    V = np.asarray(V, dtype=float)
    if V.shape != W.shape:
        raise InvalidArgumentError(f"right-hand side shape {V.shape} differs from {W.shape}")
    norms_sq = np.sum(W * W, axis=0)
    s = np.sqrt(norms_sq + mirror.eps)
    a = mirror.beta * mirror.xi + mirror.alpha / s
    c = mirror.alpha / s ** 3
    coupling = c * np.sum(W * V, axis=0) / (a - c * norms_sq)
    return (V + W * coupling) / a
