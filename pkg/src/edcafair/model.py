"""Saturation model of a multi-AC 802.11e EDCA WLAN with constant contention windows.

Durations are microseconds and the PHY rate is bits/us, so throughputs come
out in Mbps. Most quantities are evaluated in terms of the attempt odds
``alpha = tau / (1 - tau)``, which keeps the products over stations free of
cancellation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ConfigError, SolverError

EIFS_TOL = 1e-9


@dataclass(frozen=True)
class PhyParams:
    sigma: float
    sifs: float
    difs: float
    eifs: float
    t_phyhdr: float
    t_rts: float
    t_cts: float
    t_ack: float
    rate_mbps: float
    packet_bits: float

    def __post_init__(self):
        for name, value in vars(self).items():
            if not (isinstance(value, (int, float)) and value > 0 and math.isfinite(value)):
                raise ConfigError(f"phy.{name} must be a positive number, got {value!r}")
        expected = self.t_ack + self.sifs + self.difs
        if abs(self.eifs - expected) > EIFS_TOL:
            raise ConfigError(f"eifs={self.eifs} but t_ack + sifs + difs = {expected}")

    @property
    def payload_time(self) -> float:
        return self.packet_bits / self.rate_mbps


@dataclass(frozen=True)
class AcParams:
    name: str
    aifsn: int
    txop_limit: float
    delay_deadline: float
    n_stations: int
    burst_size: int | None = None  # None: derived from txop_limit

    def __post_init__(self):
        if int(self.aifsn) != self.aifsn or self.aifsn < 1:
            raise ConfigError(f"{self.name}: aifsn must be an integer >= 1")
        if int(self.n_stations) != self.n_stations or self.n_stations < 0:
            raise ConfigError(f"{self.name}: n_stations must be an integer >= 0")
        if not self.txop_limit >= 0:
            raise ConfigError(f"{self.name}: txop_limit must be >= 0")
        if not self.delay_deadline > 0:
            raise ConfigError(f"{self.name}: delay_deadline must be > 0")
        if self.burst_size is not None and (int(self.burst_size) != self.burst_size or self.burst_size < 1):
            raise ConfigError(f"{self.name}: burst_size must be an integer >= 1")


def txop_burst_size(ac: AcParams, phy: PhyParams) -> int:
    """Packets per TXOP burst: as many per-packet exchanges as fit in the limit.

    The per-burst RTS/CTS/AIFS overhead is not charged against the limit.
    """
    if ac.burst_size is not None:
        return int(ac.burst_size)
    if ac.txop_limit < 0:
        raise ConfigError("txop_limit must be >= 0")
    per_packet = phy.t_phyhdr + 2 * phy.sifs + phy.t_ack + phy.payload_time
    return max(1, math.floor(ac.txop_limit / per_packet + 1e-12))


@dataclass(frozen=True)
class DerivedTimings:
    t_col: float
    t_oo: float
    t_o: np.ndarray
    t_succ: np.ndarray
    aifs: np.ndarray


@dataclass(frozen=True)
class NetworkConfig:
    phy: PhyParams
    acs: tuple[AcParams, ...]
    retry_limit: int = 0
    beacon_interval: float = 100_000.0

    def __post_init__(self):
        object.__setattr__(self, "acs", tuple(self.acs))
        if not self.acs:
            raise ConfigError("at least one access category is required")
        if not any(ac.n_stations >= 1 for ac in self.acs):
            raise ConfigError("at least one access category needs a station")
        if int(self.retry_limit) != self.retry_limit or self.retry_limit < 0:
            raise ConfigError("retry_limit must be an integer >= 0")
        if not self.beacon_interval > 0:
            raise ConfigError("beacon_interval must be > 0")

    @property
    def N(self) -> int:
        return len(self.acs)

    @cached_property
    def names(self) -> tuple[str, ...]:
        return tuple(ac.name for ac in self.acs)

    @cached_property
    def n(self) -> np.ndarray:
        return _frozen(np.array([ac.n_stations for ac in self.acs], dtype=float))

    @cached_property
    def m(self) -> np.ndarray:
        return _frozen(np.array([txop_burst_size(ac, self.phy) for ac in self.acs], dtype=float))

    @cached_property
    def deadlines(self) -> np.ndarray:
        return _frozen(np.array([ac.delay_deadline for ac in self.acs], dtype=float))

    @cached_property
    def burst_deadlines(self) -> np.ndarray:
        return _frozen(self.m * self.deadlines)

    @cached_property
    def aifsn(self) -> np.ndarray:
        return _frozen(np.array([ac.aifsn for ac in self.acs], dtype=float))

    @property
    def t_min(self) -> int:
        return int(min(ac.aifsn for ac in self.acs if ac.n_stations >= 1))

    @cached_property
    def blocking_exponent(self) -> np.ndarray:
        """``t_i - t_min + 1`` per AC."""
        return _frozen(self.aifsn - self.t_min + 1)

    @cached_property
    def timings(self) -> DerivedTimings:
        return derive_timings(self)

    @property
    def is_active(self) -> bool:
        return all(ac.n_stations >= 1 for ac in self.acs)

    def active(self) -> tuple["NetworkConfig", np.ndarray]:
        """Drop ACs without stations; also return the kept indices."""
        idx = np.array([i for i, ac in enumerate(self.acs) if ac.n_stations >= 1], dtype=int)
        if len(idx) == self.N:
            return self, idx
        return replace(self, acs=tuple(self.acs[i] for i in idx)), idx

    def with_stations(self, ac_index: int, n_stations: int) -> "NetworkConfig":
        acs = list(self.acs)
        acs[ac_index] = replace(acs[ac_index], n_stations=n_stations)
        return replace(self, acs=tuple(acs))


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def derive_timings(config: NetworkConfig) -> DerivedTimings:
    phy = config.phy
    aifs = phy.sifs + config.aifsn * phy.sigma
    t_o = phy.t_rts + phy.sifs + phy.t_cts + aifs
    t_oo = phy.t_phyhdr + 2 * phy.sifs + phy.t_ack
    t_col = phy.t_rts + phy.eifs
    t_succ = t_o + config.m * (t_oo + phy.payload_time)
    return DerivedTimings(t_col=t_col, t_oo=t_oo, t_o=_frozen(t_o), t_succ=_frozen(t_succ), aifs=_frozen(aifs))


@dataclass(frozen=True)
class AttemptVector:
    """Per-AC attempt probability in three equivalent views."""

    alpha: np.ndarray
    tau: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        alpha, tau, eta = (np.asarray(v, dtype=float) for v in (self.alpha, self.tau, self.eta))
        if not (alpha.shape == tau.shape == eta.shape):
            raise ValueError("alpha, tau and eta must have the same shape")
        if np.any(~(tau > 0)) or np.any(~(tau < 1)):
            raise ValueError(f"attempt probabilities must lie in (0, 1): {tau}")
        if not np.allclose(alpha / (1 + alpha), tau, rtol=1e-12, atol=0):
            raise ValueError("tau inconsistent with alpha")
        if not np.allclose(np.exp(eta), alpha, rtol=1e-12, atol=0):
            raise ValueError("eta inconsistent with alpha")
        for name, v in (("alpha", alpha), ("tau", tau), ("eta", eta)):
            object.__setattr__(self, name, _frozen(v.copy()))

    @classmethod
    def from_alpha(cls, alpha) -> "AttemptVector":
        alpha = np.asarray(alpha, dtype=float)
        return cls(alpha=alpha, tau=alpha / (1 + alpha), eta=np.log(alpha))

    @classmethod
    def from_tau(cls, tau) -> "AttemptVector":
        tau = np.asarray(tau, dtype=float)
        if np.any(~(tau > 0)) or np.any(~(tau < 1)):
            raise ValueError(f"attempt probabilities must lie in (0, 1): {tau}")
        alpha = tau / (1 - tau)
        return cls(alpha=alpha, tau=alpha / (1 + alpha), eta=np.log(alpha))

    @classmethod
    def from_eta(cls, eta) -> "AttemptVector":
        eta = np.asarray(eta, dtype=float)
        alpha = np.exp(eta)
        return cls(alpha=alpha, tau=alpha / (1 + alpha), eta=eta)


def as_alpha(attempt) -> np.ndarray:
    if isinstance(attempt, AttemptVector):
        return attempt.alpha
    return np.asarray(attempt, dtype=float)


def _check(config: NetworkConfig, vec: np.ndarray, what: str = "vector") -> None:
    if not config.is_active:
        raise ConfigError("config has access categories without stations; use config.active()")
    if vec.shape != (config.N,):
        raise ValueError(f"{what} must have shape ({config.N},), got {vec.shape}")


# --- probabilities -------------------------------------------------------


def idle_prob(attempt, config: NetworkConfig) -> float:
    alpha = as_alpha(attempt)
    _check(config, alpha, "alpha")
    return math.exp(-float(np.sum(config.n * np.log1p(alpha))))


def no_other_prob(attempt, config: NetworkConfig) -> np.ndarray:
    """Probability that none of the *other* stations transmits in a slot (1 - p_i)."""
    alpha = as_alpha(attempt)
    _check(config, alpha, "alpha")
    log_idle = -np.sum(config.n * np.log1p(alpha))
    return np.exp(log_idle + np.log1p(alpha))


def collision_prob(attempt, config: NetworkConfig) -> np.ndarray:
    """Conditional collision probability per AC."""
    if isinstance(attempt, AttemptVector):
        tau = attempt.tau
    else:
        tau = np.asarray(attempt, dtype=float)
    _check(config, tau, "tau")
    log_silent = np.log1p(-tau)
    log_p0 = np.sum(config.n * log_silent) - log_silent
    return -np.expm1(log_p0)


def x_value(attempt, config: NetworkConfig) -> float:
    alpha = as_alpha(attempt)
    _check(config, alpha, "alpha")
    tm = config.timings
    prod_minus_one = math.expm1(float(np.sum(config.n * np.log1p(alpha))))
    return config.phy.sigma / tm.t_col + float(np.sum(config.n * (tm.t_succ / tm.t_col - 1) * alpha)) + prod_minus_one


def x_gradient(attempt, config: NetworkConfig) -> np.ndarray:
    """dX/d(eta_i) in closed form."""
    alpha = as_alpha(attempt)
    _check(config, alpha, "alpha")
    tm = config.timings
    prod = math.exp(float(np.sum(config.n * np.log1p(alpha))))
    return config.n * (tm.t_succ / tm.t_col - 1) * alpha + config.n * prod * alpha / (1 + alpha)


def throughput(attempt, config: NetworkConfig) -> np.ndarray:
    """Per-station throughput in Mbps."""
    alpha = as_alpha(attempt)
    tm = config.timings
    return alpha * config.m * config.phy.packet_bits / (x_value(alpha, config) * tm.t_col)


def airtime(attempt, config: NetworkConfig) -> np.ndarray:
    """Total air-time fraction per flow (successes plus collisions)."""
    alpha = as_alpha(attempt)
    tm = config.timings
    tau = alpha / (1 + alpha)
    return (alpha * (tm.t_succ / tm.t_col - 1) + tau / idle_prob(alpha, config)) / x_value(alpha, config)


# --- window <-> attempt probability ------------------------------------------


def window_from_alpha(attempt, config: NetworkConfig) -> np.ndarray:
    """Real-valued contention window producing the given attempt odds."""
    alpha = as_alpha(attempt)
    p0 = no_other_prob(alpha, config)
    return 2.0 / alpha * p0 ** config.blocking_exponent + 1.0


def _eq3_parts(tau: np.ndarray, windows: np.ndarray, config: NetworkConfig):
    log_silent = np.log1p(-tau)
    log_p0 = np.sum(config.n * log_silent) - log_silent
    unblocked = np.exp(config.blocking_exponent * log_p0)  # 1 - P_blk
    denom = 2 * unblocked + windows - 1
    return unblocked, denom, 2 * unblocked / denom


def attempt_residual(tau, windows, config: NetworkConfig) -> np.ndarray:
    """``tau - T(tau)`` for the constant-window attempt-probability map."""
    tau = np.asarray(tau, dtype=float)
    return tau - _eq3_parts(tau, np.asarray(windows, dtype=float), config)[2]


def fixed_point_jacobians(tau, windows, config: NetworkConfig) -> tuple[np.ndarray, np.ndarray]:
    """Partial Jacobians of ``G(tau, W) = tau - T(tau, W)`` w.r.t. tau and W."""
    tau = np.asarray(tau, dtype=float)
    windows = np.asarray(windows, dtype=float)
    unblocked, denom, _ = _eq3_parts(tau, windows, config)
    n, e = config.n, config.blocking_exponent
    N = config.N
    c = np.tile(n, (N, 1)) - np.eye(N)  # exponent of (1 - tau_k) in 1 - p_i
    dlogp0_dtau = -c / (1 - tau)[None, :]
    dT_du = 2 * (windows - 1) / denom**2
    dT_dtau = (dT_du * unblocked * e)[:, None] * dlogp0_dtau
    dG_dtau = np.eye(N) - dT_dtau
    dG_dW = np.diag(2 * unblocked / denom**2)
    return dG_dtau, dG_dW


def attempt_from_window(
    windows: Sequence[float],
    config: NetworkConfig,
    *,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    damping: float = 0.5,
    initial=None,
) -> AttemptVector:
    """Solve the coupled attempt-probability fixed point for given windows.

    Damped substitution from ``tau = 2/(W+1)``, switching to Newton once the
    residual drops below 1e-3. The fixed point need not be unique when some
    window is close to 1; passing ``initial`` runs Newton from that point so
    the solution stays on its branch.
    """
    W = np.asarray(windows, dtype=float)
    _check(config, W, "windows")
    if np.any(~(W > 1)):
        raise ConfigError(f"contention windows must exceed 1, got {W}")
    if initial is None:
        tau = 2.0 / (W + 1.0)
        newton_below = 1e-3
    else:
        tau = initial.tau.copy() if isinstance(initial, AttemptVector) else np.array(initial, dtype=float)
        newton_below = math.inf
    best = math.inf
    history = []
    for _ in range(max_iter):
        res = attempt_residual(tau, W, config)
        r = float(np.max(np.abs(res)))
        history.append(r)
        if r <= 1e-15 or (r <= tol and r >= best):
            break
        best = min(best, r)
        if r < newton_below:
            J, _ = fixed_point_jacobians(tau, W, config)
            step = np.linalg.solve(J, res)
            lam = 1.0
            while lam > 1e-12:
                new = tau - lam * step
                if np.all((new > 0) & (new < 1)) and np.max(np.abs(attempt_residual(new, W, config))) < r:
                    break
                lam /= 2
            else:
                raise SolverError("Newton step failed on the attempt-probability fixed point", r, history[-20:])
            tau = new
        else:
            tau = tau - damping * res
    else:
        raise SolverError("attempt-probability fixed point did not converge", r, history[-20:])
    if r > tol:
        raise SolverError("attempt-probability fixed point stalled", r, history[-20:])
    return AttemptVector.from_tau(tau)


# --- delay ---------------------------------------------------------------


@dataclass(frozen=True)
class DelayComponents:
    countdown: np.ndarray
    blocking: np.ndarray
    retransmission: np.ndarray
    success: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.countdown + self.blocking + self.retransmission + self.success


def delay_components(attempt, config: NetworkConfig, M: int | None = None, windows=None) -> DelayComponents:
    """The four expected burst-delay components, written in terms of tau.

    ``windows`` are the minimum contention windows; by default they are the
    constant windows implied by ``attempt``.
    """
    alpha = as_alpha(attempt)
    _check(config, alpha, "alpha")
    M = config.retry_limit if M is None else int(M)
    if M < 0:
        raise ValueError("retry limit must be >= 0")
    W = window_from_alpha(alpha, config) if windows is None else np.asarray(windows, dtype=float)
    tau = alpha / (1 + alpha)
    n = config.n
    tm = config.timings
    t_col, t_succ, sigma = tm.t_col, tm.t_succ, config.phy.sigma
    N = config.N
    p = collision_prob(tau, config)

    d_bs = np.empty(N)
    d_bc = np.empty(N)
    for i in range(N):
        others = math.prod((1 - tau[j]) ** n[j] for j in range(N) if j != i)
        same = (n[i] - 1) * tau[i] * (1 - tau[i]) ** (n[i] - 2) * others if n[i] > 1 else 0.0
        cross = 0.0
        cross_t = 0.0
        for j in range(N):
            if j == i:
                continue
            rest = math.prod((1 - tau[k]) ** n[k] for k in range(N) if k not in (i, j))
            term = n[j] * tau[j] * (1 - tau[j]) ** (n[j] - 1) * rest * (1 - tau[i]) ** (n[i] - 1)
            cross += term
            cross_t += t_succ[j] * term
        d_bs[i] = t_succ[i] * same + cross_t
        d_bc[i] = t_col * (1 - (1 - tau[i]) ** (n[i] - 1) * others - same - cross)

    stages = np.arange(M + 1)
    half_cw_cum = W[:, None] * (2.0 ** (stages + 1) - 1)[None, :] / 2  # sum_{h<=g} CW_h / 2
    pg = p[:, None] ** stages[None, :]
    tail = p ** (M + 1)
    countdown = sigma * (np.sum(pg * (1 - p)[:, None] * half_cw_cum, axis=1) + tail * half_cw_cum[:, -1])
    blocking = countdown / sigma * (d_bs + d_bc)
    retx = t_col * (np.sum(stages[None, :] * pg * (1 - p)[:, None], axis=1) + (M + 1) * tail)
    success = t_succ * (1 - tail)
    return DelayComponents(countdown, blocking, retx, success)


def _delay_terms(alpha: np.ndarray, config: NetworkConfig):
    tm = config.timings
    n = config.n
    p0 = no_other_prob(alpha, config)
    W = 2.0 / alpha * p0 ** config.blocking_exponent + 1.0
    weighted = (tm.t_succ - tm.t_col) * n * alpha
    z = np.sum(weighted) - weighted
    g = z - tm.t_col + (tm.t_succ - tm.t_col) * (n - 1) * alpha
    return p0, W, z, g


def delay(attempt, config: NetworkConfig, M: int | None = None) -> np.ndarray:
    """Average delay of a TXOP burst per AC (us).

    For a constant window (M=0) the closed form is used, with
    ``Y_i = prod_{j != i} (1 + alpha_j)^(-n_j)``; otherwise the component sum.
    """
    alpha = as_alpha(attempt)
    _check(config, alpha, "alpha")
    M = config.retry_limit if M is None else int(M)
    if M != 0:
        return delay_components(alpha, config, M).total
    tm = config.timings
    sigma, t_col = config.phy.sigma, tm.t_col
    p0, W, _, g = _delay_terms(alpha, config)
    # p0 == Y_i / (1 + alpha_i)^(n_i - 1)
    return W * (sigma + t_col) / 2 + p0 * (tm.t_succ - t_col) + t_col + W * p0 / 2 * g


def delay_jacobian(attempt, config: NetworkConfig) -> np.ndarray:
    """``J[j, i] = dD_j / d(eta_i)`` of the constant-window delay."""
    alpha = as_alpha(attempt)
    _check(config, alpha, "alpha")
    tm = config.timings
    n, e = config.n, config.blocking_exponent
    sigma, t_col = config.phy.sigma, tm.t_col
    N = config.N
    p0, W, _, g = _delay_terms(alpha, config)
    frac = alpha / (1 + alpha)
    dlogp0 = np.diag(frac) - (n * frac)[None, :]
    dp0 = p0[:, None] * dlogp0
    v = W - 1
    dW = v[:, None] * (-np.eye(N) + e[:, None] * dlogp0)
    weighted = (tm.t_succ - t_col) * n * alpha
    dg = np.tile(weighted, (N, 1))
    np.fill_diagonal(dg, (tm.t_succ - t_col) * (n - 1) * alpha)
    return (
        dW * ((sigma + t_col) / 2 + p0 * g / 2)[:, None]
        + dp0 * ((tm.t_succ - t_col) + W * g / 2)[:, None]
        + (W * p0 / 2)[:, None] * dg
    )
