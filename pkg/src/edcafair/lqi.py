"""Linear quadratic integral (LQI) control of the collision probabilities.

The design model works in deviations from the operating point:
``x(k+1) = B u(k)`` with ``x = p - p*`` and ``B = -H^T``, augmented with the
integrator ``s(k+1) = s(k) + Ts (r - x(k))``. Since ``dp = H^T dW``, the
model holds for the window decrement ``u = -(W - W*)``; the applied window is
therefore ``W* - u``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DesignError, SolverError
from .linearizer import LinearPlant

log = logging.getLogger(__name__)

W_MIN, W_MAX = 2, 1024


@dataclass(frozen=True)
class Weights:
    q1: float
    q2: float
    rho: float
    q: np.ndarray
    r: np.ndarray


def build_weights(q1: float, q2: float, rho: float, N: int) -> Weights:
    if min(q1, q2, rho) <= 0:
        raise ValueError(f"weights must be positive, got q1={q1}, q2={q2}, rho={rho}")
    if N < 1:
        raise ValueError("N must be >= 1")
    q = np.diag(np.concatenate([np.full(N, float(q1)), np.full(N, float(q2))]))
    return Weights(float(q1), float(q2), float(rho), q, float(rho) * np.eye(N))


def augmented(b: np.ndarray, ts: float) -> tuple[np.ndarray, np.ndarray]:
    """``(A_hat, B_hat)`` of the plant plus integrator."""
    N = len(b)
    a_hat = np.zeros((2 * N, 2 * N))
    a_hat[N:, :N] = -ts * np.eye(N)
    a_hat[N:, N:] = np.eye(N)
    b_hat = np.vstack([b, np.zeros((N, N))])
    return a_hat, b_hat


def riccati_residual(p, a, b, q, r) -> float:
    btp = b.T @ p
    rhs = a.T @ (p - btp.T @ np.linalg.solve(r + btp @ b, btp)) @ a + q
    return float(np.max(np.abs(p - rhs)))


def solve_riccati(a, b, q, r, *, tol: float = 1e-12, max_iter: int = 100) -> np.ndarray:
    """Stabilising solution of the discrete algebraic Riccati equation.

    Structure-preserving doubling; each sweep squares the horizon, so a few
    dozen sweeps cover any practical convergence rate.
    """
    n = len(a)
    ak = a.copy()
    gk = b @ np.linalg.solve(r, b.T)
    hk = q.copy()
    eye = np.eye(n)
    for _ in range(max_iter):
        w = eye + gk @ hk
        wa = np.linalg.solve(w, ak)
        wg = np.linalg.solve(w, gk)
        h_next = hk + ak.T @ hk @ wa
        gk = gk + ak @ wg @ ak.T
        ak = ak @ wa
        h_next = (h_next + h_next.T) / 2
        delta = np.max(np.abs(h_next - hk))
        hk = h_next
        if delta <= tol * max(1.0, np.max(np.abs(hk))):
            return _polish(hk, a, b, q, r)
    raise SolverError("doubling iteration for the Riccati equation did not converge", float(delta))


def _riccati_map(p, a, b, q, r):
    btp = b.T @ p
    nxt = a.T @ (p - btp.T @ np.linalg.solve(r + btp @ b, btp)) @ a + q
    return (nxt + nxt.T) / 2


def _polish(p, a, b, q, r, sweeps: int = 50) -> np.ndarray:
    # plain Riccati sweeps contract near the solution and shave off doubling round-off
    best, res = p, riccati_residual(p, a, b, q, r)
    for _ in range(sweeps):
        p = _riccati_map(p, a, b, q, r)
        new = riccati_residual(p, a, b, q, r)
        if new >= res:
            break
        best, res = p, new
    return best


def window_from_control(w_star, u) -> np.ndarray:
    """Round ``W* - u`` half away from zero and clamp to the allowed range."""
    raw = np.asarray(w_star, dtype=float) - np.asarray(u, dtype=float)
    rounded = np.sign(raw) * np.floor(np.abs(raw) + 0.5)
    return np.clip(rounded, W_MIN, W_MAX).astype(int)


def apply_window(raw_u, plant: LinearPlant) -> np.ndarray:
    return window_from_control(plant.w_star, raw_u)


@dataclass
class LqiController:
    k: np.ndarray
    p_riccati: np.ndarray
    a_hat: np.ndarray
    b_hat: np.ndarray
    ts: float
    reference: np.ndarray
    w_star: np.ndarray
    integrator: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.integrator is None:
            self.integrator = np.zeros(len(self.reference))

    @property
    def N(self) -> int:
        return len(self.reference)

    @property
    def closed_loop(self) -> np.ndarray:
        return self.a_hat - self.b_hat @ self.k

    @property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.closed_loop))))

    def reset(self) -> None:
        self.integrator = np.zeros(self.N)

    def control(self, p_obs) -> np.ndarray:
        x = np.asarray(p_obs, dtype=float) - self.reference
        return -self.k @ np.concatenate([x, self.integrator])

    def step(self, p_obs) -> tuple[np.ndarray, np.ndarray]:
        """One beacon: control from the current state, then integrate.

        Returns the applied integer windows and the raw control. Components
        whose window hit the clamp keep their integrator frozen.
        """
        p_obs = np.asarray(p_obs, dtype=float)
        u = self.control(p_obs)
        raw = self.w_star - u
        W = window_from_control(self.w_star, u)
        clamped = (raw < W_MIN - 0.5) | (raw > W_MAX + 0.5)
        if np.any(clamped):
            log.debug("window clamp active on %s (raw %s)", np.flatnonzero(clamped), raw)
        self.integrator = np.where(clamped, self.integrator, self.integrator + self.ts * (self.reference - p_obs))
        return W, u


def control_step(ctrl: LqiController, p_obs, plant: LinearPlant | None = None):
    """Functional wrapper around :meth:`LqiController.step`."""
    W, _ = ctrl.step(p_obs)
    return W, ctrl.integrator.copy()


def solve_dare(plant: LinearPlant, weights: Weights, ts: float) -> LqiController:
    """Design the LQI gain for ``plant``."""
    N = plant.N
    if weights.q.shape != (2 * N, 2 * N):
        raise ValueError("weights do not match the plant size")
    sv = np.linalg.svd(plant.b, compute_uv=False)
    if sv[-1] <= 1e-10 * max(1.0, sv[0]) or sv[-1] == 0:
        raise DesignError(f"input matrix is rank deficient (singular values {sv}); the pair is not stabilisable")
    a_hat, b_hat = augmented(plant.b, ts)
    assert a_hat.shape == (2 * N, 2 * N)
    p = solve_riccati(a_hat, b_hat, weights.q, weights.r)
    k = np.linalg.solve(weights.r + b_hat.T @ p @ b_hat, b_hat.T @ p @ a_hat)
    ctrl = LqiController(k=k, p_riccati=p, a_hat=a_hat, b_hat=b_hat, ts=ts, reference=plant.p_star.copy(), w_star=plant.w_star.copy())
    res = riccati_residual(p, a_hat, b_hat, weights.q, weights.r)
    if res > 1e-8 * max(1.0, np.max(np.abs(p))):
        raise DesignError(f"Riccati residual {res:.3e} too large")
    if ctrl.spectral_radius >= 1:
        raise DesignError(f"closed loop is not stable (spectral radius {ctrl.spectral_radius})")
    return ctrl


# --- linear closed-loop studies ----------------------------------------------


def simulate_linear(ctrl: LqiController, plant: LinearPlant, steps: int, *, p0=None, disturbance=None) -> dict:
    """Run the controller against the affine plant with integer windows.

    ``disturbance`` is a constant additive offset on the measured
    probabilities. Mutates the controller's integrator.
    """
    p = plant.p_star.copy() if p0 is None else np.asarray(p0, dtype=float)
    d = np.zeros(plant.N) if disturbance is None else np.asarray(disturbance, dtype=float)
    ps, ws = [], []
    for _ in range(steps):
        ps.append(p.copy())
        W, _ = ctrl.step(p)
        ws.append(W)
        p = plant.predict(W) + d
    return {"p": np.array(ps), "w": np.array(ws)}


def deviation_response(ctrl: LqiController, steps: int, *, x0=None, reference=None) -> np.ndarray:
    """Unquantised deviation trajectory ``x(k)`` of the augmented loop."""
    N = ctrl.N
    r = np.zeros(N) if reference is None else np.asarray(reference, dtype=float)
    z = np.zeros(2 * N)
    if x0 is not None:
        z[:N] = x0
    forcing = np.concatenate([np.zeros(N), ctrl.ts * r])
    acl = ctrl.closed_loop
    out = np.empty((steps, N))
    for t in range(steps):
        out[t] = z[:N]
        z = acl @ z + forcing
    return out


def transient_metrics(ctrl: LqiController, x0, channel: int = 0, steps: int = 400) -> tuple[float, float]:
    """Overshoot and 10-90 % rise time (beacons) of a start-up transient.

    The loop starts with the integrator at zero and the probabilities at
    ``p* + x0``, which is a reference step from ``p* + x0`` to ``p*``. The
    response of ``channel`` is normalised so that 0 is the start and 1 the
    target; rise time is interpolated between beacons.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0[channel] == 0:
        raise ValueError("the chosen channel must start away from its reference")
    y = 1.0 - deviation_response(ctrl, steps, x0=x0)[:, channel] / x0[channel]
    return float(np.max(y)) - 1.0, _crossing(y, 0.9) - _crossing(y, 0.1)


def _crossing(y: np.ndarray, level: float) -> float:
    k = int(np.argmax(y >= level))
    if y[k] < level:
        return float("inf")
    if k == 0:
        return 0.0
    return k - 1 + (level - y[k - 1]) / (y[k] - y[k - 1])
