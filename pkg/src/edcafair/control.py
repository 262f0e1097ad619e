"""Beacon-by-beacon adaptive window control over the simulator.

Every beacon interval the AP turns the RTS / missing-CTS counters into
observed collision probabilities, takes one LQI step and broadcasts the new
integer windows. Topology events re-run the optimizer and the design.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import lqi, macsim, optimizer
from .errors import ConfigError, DesignError, EdcaError
from .linearizer import LinearPlant, linear_plant
from .model import NetworkConfig

log = logging.getLogger(__name__)

ACTIONS = ("add-station", "remove-station")
PLANTS = ("sim", "linear")


@dataclass(frozen=True)
class ScenarioEvent:
    time_us: float
    action: str
    ac_index: int

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ConfigError(f"unknown scenario action {self.action!r}; expected one of {ACTIONS}")
        if not self.time_us >= 0:
            raise ConfigError(f"event time must be >= 0, got {self.time_us}")


@dataclass(frozen=True)
class BeaconRecord:
    """One beacon interval; per-AC vectors use NaN for ACs without stations."""

    k: int
    time_us: float
    w_applied: np.ndarray
    p_obs: np.ndarray
    p_used: np.ndarray
    p_star: np.ndarray
    throughput: np.ndarray  # per station, Mbps
    integrator: np.ndarray
    n_stations: np.ndarray


@dataclass
class ClosedLoopRun:
    records: list[BeaconRecord]
    points: list = field(default_factory=list)  # operating point per topology segment
    aborted: str | None = None

    def __len__(self) -> int:
        return len(self.records)

    def stack(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


def validate_scenario(config: NetworkConfig, scenario) -> list[ScenarioEvent]:
    """Check ordering and that every removal hits an existing station."""
    n = config.n.astype(int).copy()
    last = -np.inf
    for ev in scenario:
        if ev.time_us < last:
            raise ConfigError("scenario events must be in non-decreasing time order")
        if not 0 <= ev.ac_index < config.N:
            raise ConfigError(f"event AC index {ev.ac_index} out of range")
        n[ev.ac_index] += 1 if ev.action == "add-station" else -1
        if n[ev.ac_index] < 0:
            raise ConfigError(f"event at {ev.time_us} us removes a station from an empty AC")
        if n.sum() == 0:
            raise ConfigError(f"event at {ev.time_us} us leaves the network empty")
        last = ev.time_us
    return list(scenario)


class _Segment:
    """Operating point, plant and controller for one topology."""

    def __init__(self, config: NetworkConfig, weights: lqi.Weights, ts: float):
        self.config = config
        self.point = optimizer.optimize(config)
        self.idx = self.point.ac_index
        self.plant: LinearPlant = linear_plant(self.point)
        self.ctrl = None
        if config.n.sum() == 1:
            log.info("single station: controller bypassed, windows fixed at the optimum")
        else:
            w = lqi.build_weights(weights.q1, weights.q2, weights.rho, self.plant.N)
            self.ctrl = lqi.solve_dare(self.plant, w, ts)
        self.windows = lqi.window_from_control(self.plant.w_star, np.zeros(self.plant.N))

    def full(self, v, fill=np.nan) -> np.ndarray:
        out = np.full(self.config.N, fill, dtype=float)
        out[self.idx] = v
        return out

    def full_windows(self) -> np.ndarray:
        # empty ACs get a placeholder the simulator ignores
        out = np.full(self.config.N, float(lqi.W_MIN))
        out[self.idx] = self.windows
        return out

    @property
    def integrator(self) -> np.ndarray:
        return np.zeros(self.plant.N) if self.ctrl is None else self.ctrl.integrator.copy()

    def step(self, p_used) -> None:
        if self.ctrl is not None:
            self.windows, _ = self.ctrl.step(p_used)


def run_closed_loop(
    config: NetworkConfig,
    scenario,
    weights: lqi.Weights,
    seed: int,
    duration_us: float,
    *,
    plant: str = "sim",
    mode: str = "persistent",
) -> ClosedLoopRun:
    """Run the adaptive controller for ``floor(duration / beacon)`` intervals.

    Events take effect at the first beacon boundary at or after their time.
    With ``plant="linear"`` the simulator is replaced by the affine model of
    the current operating point, which makes the loop deterministic.
    """
    if plant not in PLANTS:
        raise ConfigError(f"unknown plant {plant!r}; expected one of {PLANTS}")
    events = validate_scenario(config, scenario)
    beacon = float(config.beacon_interval)
    ts = beacon * 1e-6
    steps = int(np.floor(duration_us / beacon))
    if steps < 1:
        raise ConfigError(f"duration {duration_us} us is shorter than one beacon interval")

    cfg = config
    seg = _Segment(cfg, weights, ts)
    run = ClosedLoopRun(records=[], points=[seg.point])
    sim = macsim.Simulator(cfg, seed, mode=mode) if plant == "sim" else None
    held = seg.plant.p_star.copy()
    pending = 0
    m_bits = cfg.m * cfg.phy.packet_bits

    for k in range(steps):
        t0 = k * beacon
        changed = False
        while pending < len(events) and events[pending].time_us <= t0:
            ev = events[pending]
            pending += 1
            delta = 1 if ev.action == "add-station" else -1
            cfg = cfg.with_stations(ev.ac_index, int(cfg.n[ev.ac_index]) + delta)
            if sim is not None:
                (sim.add_station if delta > 0 else sim.remove_station)(ev.ac_index)
            changed = True
        if changed:
            try:
                seg = _Segment(cfg, weights, ts)
            except (EdcaError, DesignError) as exc:
                run.aborted = f"redesign at beacon {k} failed: {exc}"
                log.error(run.aborted)
                return run
            run.points.append(seg.point)
            held = seg.plant.p_star.copy()
            log.info("beacon %d: topology %s, new W* %s", k, cfg.n.astype(int), seg.plant.w_star)

        W = seg.windows.copy()
        integ = seg.integrator
        if sim is None:
            p_obs = seg.plant.predict(W)
            thr = np.full(len(W), np.nan)
        else:
            counts = sim.run_interval(seg.full_windows(), beacon)
            p_obs = counts.p_obs[seg.idx]
            n = cfg.n[seg.idx]
            thr = counts.successes[seg.idx] * m_bits[seg.idx] / (n * counts.elapsed)
        p_used = np.where(np.isnan(p_obs), held, p_obs)
        held = p_used
        run.records.append(BeaconRecord(
            k=k, time_us=t0, w_applied=seg.full(W), p_obs=seg.full(p_obs), p_used=seg.full(p_used),
            p_star=seg.full(seg.plant.p_star), throughput=seg.full(thr), integrator=seg.full(integ),
            n_stations=cfg.n.astype(int).copy(),
        ))
        seg.step(p_used)
    return run
