"""Linearisation of the window -> collision-probability map.

Row/column convention follows ``dp = dW @ H``: ``H[j, i] = dp_i / dW_j``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model
from .errors import SolverError
from .model import NetworkConfig


@dataclass(frozen=True)
class LinearPlant:
    h: np.ndarray
    w_star: np.ndarray
    p_star: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.h)):
            raise ValueError("plant matrix has non-finite entries")
        if not np.array_equal(self.b, -self.h.T):
            raise ValueError("b must equal -h.T")
        if not np.array_equal(self.c, np.eye(len(self.h))):
            raise ValueError("c must be the identity")

    @property
    def N(self) -> int:
        return len(self.h)

    def predict(self, windows) -> np.ndarray:
        """Affine prediction of the collision probabilities at ``windows``."""
        return (np.asarray(windows, dtype=float) - self.w_star) @ self.h + self.p_star


def collision_tau_jacobian(tau, config: NetworkConfig) -> np.ndarray:
    """``J[i, k] = dp_i / dtau_k``."""
    tau = np.asarray(tau, dtype=float)
    p0 = 1 - model.collision_prob(tau, config)
    c = np.tile(config.n, (config.N, 1)) - np.eye(config.N)
    return p0[:, None] * c / (1 - tau)[None, :]


def window_jacobian(windows, config: NetworkConfig, attempt=None) -> np.ndarray:
    """``H[j, i] = dp_i / dW_j`` by implicit differentiation of the fixed point."""
    windows = np.asarray(windows, dtype=float)
    if attempt is None:
        attempt = model.attempt_from_window(windows, config)
    tau = attempt.tau
    g_tau, g_w = model.fixed_point_jacobians(tau, windows, config)
    if np.linalg.cond(g_tau) > 1e12:
        raise SolverError("fixed-point Jacobian is singular", float(np.linalg.cond(g_tau)))
    dtau_dw = -np.linalg.solve(g_tau, g_w)  # [k, j] = dtau_k / dW_j
    dp_dw = collision_tau_jacobian(tau, config) @ dtau_dw  # [i, j]
    return dp_dw.T


def plant_jacobian(point, config: NetworkConfig | None = None) -> np.ndarray:
    """``H`` at an optimal operating point, on the branch through ``tau*``."""
    cfg = point.config if config is None else config
    return window_jacobian(point.windows, cfg, point.attempt)


def linear_plant(point, config: NetworkConfig | None = None) -> LinearPlant:
    h = plant_jacobian(point, config)
    return LinearPlant(h=h, w_star=np.array(point.windows, dtype=float), p_star=np.array(point.p_star, dtype=float), b=-h.T, c=np.eye(len(h)))


def printed_jacobian(tau, config: NetworkConfig) -> np.ndarray:
    """``H`` assembled from the closed-form partials as usually printed.

    The attempt-probability partials there hold the other ACs fixed, so this
    ignores the coupling through the fixed point. Kept as a diagnostic to
    compare against :func:`window_jacobian`.
    """
    tau = np.asarray(tau, dtype=float)
    n, e = config.n, config.blocking_exponent
    N = config.N
    idle = np.prod((1 - tau) ** n)
    unblocked = (1 - model.collision_prob(tau, config)) ** e
    dp_dtau = np.empty((N, N))
    dtau_dw = np.empty((N, N))  # [k, j] = dtau_k / dW_j
    for i in range(N):
        for j in range(N):
            if i == j:
                dp_dtau[i, i] = idle * (n[i] - 1) / (1 - tau[i]) ** 2
                dtau_dw[i, i] = tau[i] ** 2 / (-2 * unblocked[i] * (1 + (n[i] - 1) * e[i] * tau[i]))
            else:
                dp_dtau[i, j] = idle * n[j] / ((1 - tau[i]) * (1 - tau[j]))
                dtau_dw[i, j] = tau[j] * (1 - tau[i]) / (-2 * unblocked[j] * n[i] * (1 - tau[j]) * e[j])
    return (dp_dtau @ dtau_dw).T
