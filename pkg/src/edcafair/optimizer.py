"""Delay-constrained proportional fairness over the attempt probabilities.

The program maximises ``U1(eta) = sum_i n_i (eta_i - log X(e^eta))`` subject to
``D_i <= m_i d_i``. Constraints are carried in normalised form
``D_i / (m_i d_i) - 1 <= 0`` so the multipliers are dimensionless.

``optimize`` runs the projected subgradient iteration on the dual with
``gamma_t = 1/t**2`` and then refines the iterate by solving the KKT system
with Newton's method on the active set the dual iteration points at. The
diminishing steps sum to ~1.64, so the dual iteration alone can stall short
of the optimum.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import model
from .errors import InfeasibleError, SolverError
from .model import AttemptVector, NetworkConfig

log = logging.getLogger(__name__)

ETA_BOUNDS = (-40.0, 12.0)


@dataclass(frozen=True)
class Multipliers:
    mu: np.ndarray
    iteration: int = 0
    step: float = math.nan

    @classmethod
    def zeros(cls, n: int) -> "Multipliers":
        return cls(np.zeros(n))


def _mu(mu) -> np.ndarray:
    return np.asarray(mu.mu if isinstance(mu, Multipliers) else mu, dtype=float)


def utility(eta, config: NetworkConfig) -> float:
    eta = np.asarray(eta, dtype=float)
    return float(np.sum(config.n * (eta - math.log(model.x_value(np.exp(eta), config)))))


def utility_gradient(eta, config: NetworkConfig) -> np.ndarray:
    alpha = np.exp(np.asarray(eta, dtype=float))
    n_tot = float(np.sum(config.n))
    return config.n - n_tot / model.x_value(alpha, config) * model.x_gradient(alpha, config)


def constraint_gaps(attempt, config: NetworkConfig) -> np.ndarray:
    """Normalised slack ``1 - D_i / (m_i d_i)``; negative means violated."""
    return 1.0 - model.delay(attempt, config, 0) / config.burst_deadlines


def kkt_residual(attempt, mu, config: NetworkConfig) -> np.ndarray:
    """Stationarity residual ``f_i`` of the Lagrangian in eta."""
    alpha = model.as_alpha(attempt)
    mu = _mu(mu)
    n_tot = float(np.sum(config.n))
    fx = n_tot / model.x_value(alpha, config) * model.x_gradient(alpha, config)
    jd = model.delay_jacobian(alpha, config)
    return fx + jd.T @ (mu / config.burst_deadlines) - config.n


def lagrangian(eta, mu, config: NetworkConfig) -> float:
    eta = np.asarray(eta, dtype=float)
    return utility(eta, config) + float(np.sum(_mu(mu) * constraint_gaps(np.exp(eta), config)))


def dual_value(mu, alpha_star, config: NetworkConfig) -> float:
    """g(mu), given the inner maximiser for ``mu``."""
    return lagrangian(np.log(model.as_alpha(alpha_star)), mu, config)


def _fd_jacobian(fun, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    cols = []
    for k in range(len(x)):
        step = h * max(1.0, abs(x[k]))
        xp, xm = x.copy(), x.copy()
        xp[k] += step
        xm[k] -= step
        cols.append((fun(xp) - fun(xm)) / (2 * step))
    return np.column_stack(cols)


def _default_eta(config: NetworkConfig) -> np.ndarray:
    return np.full(config.N, -math.log(float(np.sum(config.n)) + 1.0))


def _projected_norm(eta: np.ndarray, fval: np.ndarray) -> float:
    # components pinned at a bound and pushing outward are stationary
    lo, hi = ETA_BOUNDS
    keep = ~(((eta >= hi) & (fval < 0)) | ((eta <= lo) & (fval > 0)))
    return float(np.max(np.abs(fval[keep]), initial=0.0))


def solve_inner(mu, config: NetworkConfig, warm_start=None, *, tol: float = 1e-9, max_iter: int = 200) -> AttemptVector:
    """Maximise the Lagrangian over eta for fixed multipliers.

    Damped Newton on ``f(eta) = 0`` with a finite-difference Jacobian. A step
    is accepted once it lowers ``|f|`` or raises the Lagrangian; the Jacobian
    is shifted towards the identity when it is not positive definite.
    """
    mu = _mu(mu)
    eta = np.log(model.as_alpha(warm_start)) if warm_start is not None else _default_eta(config)
    eta = np.clip(eta, *ETA_BOUNDS)

    def f(e):
        return kkt_residual(np.exp(e), mu, config)

    fval = f(eta)
    history = [_projected_norm(eta, fval)]
    for _ in range(max_iter):
        if history[-1] <= tol:
            return AttemptVector.from_eta(eta)
        J = _fd_jacobian(f, eta)
        Js = (J + J.T) / 2
        shift = 0.0
        lo = np.linalg.eigvalsh(Js)[0]
        if lo <= 1e-10 * max(1.0, np.max(np.abs(Js))):
            shift = 1e-8 - lo + 1e-3 * max(1.0, np.max(np.abs(Js)))
        try:
            step = np.linalg.solve(J + shift * np.eye(len(eta)), fval)
        except np.linalg.LinAlgError:
            step = fval
        lag0 = lagrangian(eta, mu, config)
        norm0 = history[-1]
        lam = 1.0
        for _ in range(60):
            cand = np.clip(eta - lam * step, *ETA_BOUNDS)
            fc = f(cand)
            nc = _projected_norm(cand, fc)
            if np.all(np.isfinite(fc)) and (nc < norm0 or lagrangian(cand, mu, config) > lag0 + 1e-14 * abs(lag0)):
                break
            lam /= 2
        else:
            raise SolverError("inner Newton line search failed", norm0, history)
        eta, fval = cand, fc
        history.append(nc)
    if history[-1] <= tol:
        return AttemptVector.from_eta(eta)
    raise SolverError("inner Newton did not converge", history[-1], history)


def subgradient_step(mu: Multipliers, alpha_star, config: NetworkConfig) -> Multipliers:
    """Projected subgradient update of the multipliers with ``gamma = 1/t**2``."""
    t = mu.iteration + 1
    gamma = 1.0 / t**2
    new = np.maximum(0.0, _mu(mu) - gamma * constraint_gaps(alpha_star, config))
    return Multipliers(new, t, gamma)


@dataclass
class SubgradientRun:
    mu: Multipliers
    attempt: AttemptVector
    converged: bool
    history: list = field(default_factory=list)


def run_subgradient(config: NetworkConfig, *, eps: float = 1e-3, max_iter: int = 10_000) -> SubgradientRun:
    """Dual iteration from ``mu = 0``.

    Stops when the iterate is approximately primal feasible and
    complementary (every multiplier is ~0 or its constraint is tight), or
    when the remaining step budget can no longer move any multiplier by
    ``eps``.
    """
    mu = Multipliers.zeros(config.N)
    attempt = None
    history = []
    for _ in range(max_iter):
        attempt = solve_inner(mu, config, attempt)
        gaps = constraint_gaps(attempt, config)
        g = dual_value(mu, attempt, config)
        history.append({"t": mu.iteration + 1, "mu": _mu(mu).copy(), "gaps": gaps, "dual": g})
        if np.all(gaps >= -eps) and np.all((_mu(mu) <= eps) | (np.abs(gaps) <= eps)):
            return SubgradientRun(mu, attempt, True, history)
        t = mu.iteration + 1
        # sum_{s>t} 1/s^2 < 1/t bounds how far the multipliers can still move
        if t > 1 and float(np.max(np.abs(gaps))) / t < eps:
            return SubgradientRun(mu, attempt, False, history)
        mu = subgradient_step(mu, attempt, config)
        if np.max(mu.mu) > 1e12:
            raise InfeasibleError("multipliers diverged; deadlines look infeasible")
    return SubgradientRun(mu, attempt, False, history)


def _kkt_solve(config: NetworkConfig, eta0: np.ndarray, mu0: np.ndarray, active: tuple[int, ...], tol: float = 1e-11):
    """Newton on stationarity plus equality of the active constraints."""
    N = config.N
    act = list(active)

    def F(x):
        eta = np.clip(x[:N], *ETA_BOUNDS)
        mu = np.zeros(N)
        mu[act] = x[N:]
        alpha = np.exp(eta)
        res = kkt_residual(alpha, mu, config)
        if act:
            res = np.concatenate([res, -constraint_gaps(alpha, config)[act]])
        return res

    def pinned(x, fx):
        lo, hi = ETA_BOUNDS
        return ((x[:N] >= hi) & (fx[:N] < 0)) | ((x[:N] <= lo) & (fx[:N] > 0))

    def norm_of(x, fx):
        return max(_projected_norm(x[:N], fx[:N]), float(np.max(np.abs(fx[N:]), initial=0.0)))

    x = np.concatenate([eta0, mu0[act]])
    fx = F(x)
    norm = norm_of(x, fx)
    for _ in range(100):
        if not np.isfinite(norm):
            return None
        if norm <= tol:
            break
        J = _fd_jacobian(F, x)
        free = np.concatenate([~pinned(x, fx), np.ones(len(act), dtype=bool)])
        step = np.zeros_like(x)
        try:
            step[free] = np.linalg.lstsq(J[np.ix_(free, free)], fx[free], rcond=None)[0]
        except np.linalg.LinAlgError:
            return None
        lam = 1.0
        for _ in range(50):
            cand = x - lam * step
            cand[:N] = np.clip(cand[:N], *ETA_BOUNDS)
            fc = F(cand)
            nc = norm_of(cand, fc)
            if np.isfinite(nc) and nc < norm:
                break
            lam /= 2
        else:
            break
        x, fx, norm = cand, fc, nc
    if norm > 1e-8:
        return None
    mu = np.zeros(N)
    mu[act] = x[N:]
    return x[:N], mu


def _kkt_ok(eta, mu, config, tol=1e-9) -> bool:
    gaps = constraint_gaps(np.exp(eta), config)
    return bool(np.all(mu >= -tol) and np.all(gaps >= -tol))


def multiplier_estimate(eta, config: NetworkConfig, active) -> np.ndarray:
    """Least-squares multipliers for ``active`` from the stationarity condition."""
    act = list(active)
    mu = np.zeros(config.N)
    if not act:
        return mu
    alpha = np.exp(np.asarray(eta, dtype=float))
    r0 = kkt_residual(alpha, mu, config)
    A = (model.delay_jacobian(alpha, config).T / config.burst_deadlines)[:, act]
    mu[act] = np.linalg.lstsq(A, -r0, rcond=None)[0]
    return mu


def _active_set_search(config, eta, mu, active, seen):
    while active not in seen:
        seen.add(active)
        sol = _kkt_solve(config, eta, multiplier_estimate(eta, config, active), tuple(sorted(active)))
        if sol is None:
            sol = _kkt_solve(config, eta, np.maximum(mu, 0.0), tuple(sorted(active)))
        if sol is None:
            return None
        eta_s, mu_s = sol
        if _kkt_ok(eta_s, mu_s, config):
            return eta_s, np.maximum(mu_s, 0.0)
        gaps = constraint_gaps(np.exp(eta_s), config)
        eta, mu = eta_s, np.maximum(mu_s, 0.0)
        neg = [i for i in active if mu_s[i] < -1e-9]
        if neg:
            active = active - {min(neg, key=lambda i: mu_s[i])}
        else:
            viol = [i for i in range(config.N) if i not in active and gaps[i] < -1e-9]
            active = active | {min(viol, key=lambda i: gaps[i])}
    return None


def _guess_active(eta, mu, config, eps):
    gaps = constraint_gaps(np.exp(eta), config)
    return frozenset(int(i) for i in np.flatnonzero((mu > eps) | (gaps < eps)))


def _sqp_point(config: NetworkConfig, eta0: np.ndarray) -> np.ndarray:
    from scipy.optimize import minimize

    res = minimize(
        lambda e: -utility(e, config),
        eta0,
        jac=lambda e: -utility_gradient(e, config),
        method="SLSQP",
        bounds=[ETA_BOUNDS] * config.N,
        constraints=[{"type": "ineq", "fun": lambda e: constraint_gaps(np.exp(e), config)}],
        options={"ftol": 1e-14, "maxiter": 1000},
    )
    return res.x


def _refine(config: NetworkConfig, eta0: np.ndarray, mu0: np.ndarray, eps: float):
    seen = set()
    sol = _active_set_search(config, eta0, mu0, _guess_active(eta0, mu0, config, eps), seen)
    if sol is not None:
        return sol
    # restart from a sequential-quadratic-programming point
    eta1 = _sqp_point(config, eta0)
    seen_sqp = set()
    sol = _active_set_search(config, eta1, mu0, _guess_active(eta1, mu0, config, eps), seen_sqp)
    if sol is not None:
        return sol
    for size in range(config.N + 1):
        for subset in itertools.combinations(range(config.N), size):
            sol = _kkt_solve(config, eta1, multiplier_estimate(eta1, config, subset), subset)
            if sol is not None and _kkt_ok(*sol, config):
                return sol[0], np.maximum(sol[1], 0.0)
    return None


@dataclass(frozen=True)
class OperatingPoint:
    """Optimal operating point of an (active-only) network configuration.

    ``ac_index`` maps each entry back to the AC position in the configuration
    passed to :func:`optimize`.
    """

    config: NetworkConfig
    ac_index: np.ndarray
    attempt: AttemptVector
    windows: np.ndarray
    p_star: np.ndarray
    mu_star: Multipliers
    throughputs: np.ndarray
    delays: np.ndarray
    airtimes: np.ndarray
    utility: float
    kkt_norm: float
    subgradient_converged: bool
    history: list = field(default_factory=list, repr=False, compare=False)

    @property
    def gaps(self) -> np.ndarray:
        return 1.0 - self.delays / self.config.burst_deadlines

    @property
    def mu_per_us(self) -> np.ndarray:
        """Multipliers rescaled to the un-normalised constraint ``D_i - m_i d_i <= 0``."""
        return self.mu_star.mu / self.config.burst_deadlines

    @property
    def complementary_slackness(self) -> float:
        return float(np.sum(self.mu_star.mu * np.abs(self.gaps)))


def operating_point(config: NetworkConfig, attempt: AttemptVector, mu: Multipliers, *, ac_index=None, converged=True, history=()) -> OperatingPoint:
    return OperatingPoint(
        config=config,
        ac_index=np.arange(config.N) if ac_index is None else np.asarray(ac_index),
        attempt=attempt,
        windows=model.window_from_alpha(attempt, config),
        p_star=model.collision_prob(attempt, config),
        mu_star=mu,
        throughputs=model.throughput(attempt, config),
        delays=model.delay(attempt, config, 0),
        airtimes=model.airtime(attempt, config),
        utility=utility(attempt.eta, config),
        kkt_norm=_projected_norm(attempt.eta, kkt_residual(attempt, mu, config)),
        subgradient_converged=converged,
        history=list(history),
    )


def optimize(config: NetworkConfig, *, eps: float = 1e-3, max_iter: int = 10_000, refine: bool = True) -> OperatingPoint:
    """Proportional-fair attempt probabilities under the delay deadlines.

    ACs without stations are dropped; the returned point refers to the
    reduced configuration and records the original indices in ``ac_index``.
    """
    cfg, idx = config.active()
    run = run_subgradient(cfg, eps=eps, max_iter=max_iter)
    attempt, mu = run.attempt, run.mu
    if refine:
        sol = _refine(cfg, attempt.eta, _mu(mu), eps)
        if sol is None:
            raise InfeasibleError("no KKT point satisfies the delay deadlines", best=run)
        eta, mu_arr = sol
        attempt = AttemptVector.from_eta(eta)
        mu = Multipliers(mu_arr, mu.iteration, mu.step)
    elif not run.converged:
        raise SolverError("subgradient iteration stopped before meeting its termination rule",
                          float(np.max(np.abs(constraint_gaps(attempt, cfg)))), run.history)
    point = operating_point(cfg, attempt, mu, ac_index=idx, converged=run.converged, history=run.history)
    log.debug("optimum %s: W*=%s mu=%s", cfg.names, point.windows, point.mu_star.mu)
    return point


def concavity_probe(eta, config: NetworkConfig, h: float = 1e-5) -> float:
    """Largest eigenvalue of a central-difference Hessian of ``U1`` at ``eta``."""
    eta = np.asarray(eta, dtype=float)
    H = _fd_jacobian(lambda e: utility_gradient(e, config), eta, h)
    return float(np.max(np.linalg.eigvalsh((H + H.T) / 2)))
