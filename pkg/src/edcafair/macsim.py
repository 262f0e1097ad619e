"""Slot-level simulator of saturated EDCA stations with RTS/CTS.

Every MAC slot is idle (``sigma``), a successful TXOP burst of one AC
(``T_succ``) or a collision (``T_col``). Two station behaviours are offered:

``persistent``
    Each station attempts independently in every slot with the probability
    its window implies through the attempt-probability equation, using a
    running estimate of how often the *other* stations leave a slot silent.
    This is the decoupled station the analytic model describes, realised
    literally, and it accepts real-valued windows.

``uniform``
    Classic counters drawn uniformly from ``[0, W-1]`` that count down on
    idle slots, with ``t_i - t_min`` extra idle slots after each busy slot.
    Real windows are randomly rounded to an adjacent integer with the right
    mean. Kept as a diagnostic: it does not follow the model closely.

Beacons are zero-length bookkeeping epochs. A slot is accounted to the
beacon interval in which it starts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import ConfigError
from .model import NetworkConfig

MODES = ("persistent", "uniform")
CHUNK = 8192
EMA_FLOOR = 1e-3


@dataclass
class StationState:
    """Snapshot of one station; counters are cumulative since it joined."""

    ac_index: int
    backoff: int = 0
    aifs_wait: int = 0
    rts_sent: int = 0
    cts_missing: int = 0
    bursts_delivered: int = 0


@dataclass(frozen=True)
class SimStats:
    """Aggregate results of one run; per-AC arrays follow the config order."""

    names: tuple
    n_stations: np.ndarray
    attempts: np.ndarray
    successes: np.ndarray
    collisions: np.ndarray
    slots: int
    idle_slots: int
    collision_slots: int
    success_slots: np.ndarray
    tau: np.ndarray
    p_obs: np.ndarray
    throughput: np.ndarray
    mean_delay: np.ndarray
    sim_time: float
    seed: int
    mode: str
    intervals: "IntervalTrace" = field(repr=False)

    @property
    def idle_fraction(self) -> float:
        return self.idle_slots / self.slots

    def busy_time(self, config: NetworkConfig) -> float:
        tm = config.timings
        return float(self.collision_slots * tm.t_col + np.sum(self.success_slots * tm.t_succ))


@dataclass(frozen=True)
class IntervalTrace:
    """Per-beacon-interval counters, shape ``(intervals, N)``."""

    rts: np.ndarray
    cts_missing: np.ndarray
    successes: np.ndarray
    length: float

    def p_obs(self, k: int) -> np.ndarray:
        return measure_interval(self.rts[k], self.cts_missing[k])


def measure_interval(rts, cts_missing) -> np.ndarray:
    """Observed collision probability per AC; NaN where nothing was sent."""
    rts = np.asarray(rts, dtype=float)
    miss = np.asarray(cts_missing, dtype=float)
    if np.any(miss > rts) or np.any(rts < 0) or np.any(miss < 0):
        raise ValueError("counters must satisfy 0 <= missing CTS <= RTS")
    out = np.full(rts.shape, np.nan)
    ok = rts > 0
    out[ok] = miss[ok] / rts[ok]
    return out


@numba.njit(cache=True)
def _loop(
    mode, gain_floor, ac_of, expo, wait, windows, t_succ, t_col, sigma, duration, beacon,
    rng_buf, ptr, qhat, seen, backoff, aifs_left, state_t,
    att, succ, coll, hol, dsum, dcnt, iv_rts, iv_miss, iv_succ, glob,
):
    ns = ac_of.shape[0]
    t = state_t[0]
    C = rng_buf.shape[1]
    tx = np.zeros(ns, np.bool_)
    while t < duration:
        for s in range(ns):
            if ptr[s] + 2 > C:
                state_t[0] = t
                return s
        k = int(t // beacon)
        cnt = 0
        last = -1
        if mode == 0:
            for s in range(ns):
                a = ac_of[s]
                u = qhat[s] ** expo[a]
                tau = 2.0 * u / (2.0 * u + windows[a] - 1.0)
                tx[s] = rng_buf[s, ptr[s]] < tau
                ptr[s] += 1
                if tx[s]:
                    cnt += 1
                    last = s
        else:
            for s in range(ns):
                tx[s] = backoff[s] == 0 and aifs_left[s] == 0
                if tx[s]:
                    cnt += 1
                    last = s
        if cnt == 0:
            dt = sigma
            glob[0] += 1
        elif cnt == 1:
            dt = t_succ[ac_of[last]]
            glob[2 + ac_of[last]] += 1
        else:
            dt = t_col
            glob[1] += 1
        t_end = t + dt
        for s in range(ns):
            a = ac_of[s]
            if mode == 0:
                others = cnt - (1 if tx[s] else 0)
                silent = 1.0 if others == 0 else 0.0
                gain = max(1.0 / (seen[s] + 1.0), gain_floor)
                qhat[s] += gain * (silent - qhat[s])
            if tx[s]:
                att[s] += 1
                iv_rts[k, a] += 1
                if cnt == 1:
                    succ[s] += 1
                    iv_succ[k, a] += 1
                else:
                    coll[s] += 1
                    iv_miss[k, a] += 1
                dsum[a] += t_end - hol[s]
                dcnt[a] += 1
                hol[s] = t_end
            if mode == 1:
                if tx[s]:
                    w = windows[a]
                    lo = math.floor(w)
                    wi = lo + 1 if rng_buf[s, ptr[s]] < w - lo else lo
                    backoff[s] = int(rng_buf[s, ptr[s] + 1] * wi)
                    ptr[s] += 2
                if cnt > 0:
                    aifs_left[s] = wait[a]
                elif aifs_left[s] > 0:
                    aifs_left[s] -= 1
                elif not tx[s] and backoff[s] > 0:
                    backoff[s] -= 1
        for s in range(ns):
            seen[s] += 1
        t = t_end
    state_t[0] = t
    return -1


def _stream(seed: int, ac_index: int, serial: int) -> np.random.Generator:
    # keyed by (AC, serial) so stations never share or shift each other's draws
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(ac_index, serial))))


@dataclass(frozen=True)
class IntervalCounts:
    """Counters of one stretch of simulated time, per AC."""

    rts: np.ndarray
    cts_missing: np.ndarray
    successes: np.ndarray
    idle_slots: int
    collision_slots: int
    success_slots: np.ndarray
    elapsed: float

    @property
    def p_obs(self) -> np.ndarray:
        return measure_interval(self.rts, self.cts_missing)


class Simulator:
    """Resumable simulation state: stations, their streams and clock.

    Windows may change between calls to :meth:`advance`; stations may join
    or leave at those boundaries.
    """

    def __init__(self, config: NetworkConfig, seed: int, *, mode: str = "persistent", gain_floor: float = EMA_FLOOR, initial_quiet=None):
        if mode not in MODES:
            raise ConfigError(f"unknown simulator mode {mode!r}; expected one of {MODES}")
        self.config = config
        self.seed = int(seed)
        self.mode = mode
        self.gain_floor = float(gain_floor)
        self.time = 0.0
        self.boundary = 0.0  # nominal end of the last interval run
        N = config.N
        aifsn = np.array([ac.aifsn for ac in config.acs], dtype=np.int64)
        self._aifsn = aifsn
        self._t_succ = np.array(config.timings.t_succ, dtype=float)
        self._serial = np.zeros(N, dtype=int)
        self._gens: list[np.random.Generator] = []
        self._ac_of = np.zeros(0, dtype=np.int64)
        self._buf = np.empty((0, CHUNK))
        self._ptr = np.zeros(0, dtype=np.int64)
        self._qhat = np.zeros(0)
        self._seen = np.zeros(0, dtype=np.int64)
        self._backoff = np.zeros(0, dtype=np.int64)
        self._aifs_left = np.zeros(0, dtype=np.int64)
        self._hol = np.zeros(0)
        self._att = np.zeros(0, dtype=np.int64)
        self._succ = np.zeros(0, dtype=np.int64)
        self._coll = np.zeros(0, dtype=np.int64)
        self.delay_sum = np.zeros(N)
        self.delay_count = np.zeros(N, dtype=np.int64)
        for a, ac in enumerate(config.acs):
            for _ in range(ac.n_stations):
                q = 1.0 if initial_quiet is None else float(np.asarray(initial_quiet)[a])
                self.add_station(a, quiet=q)

    @property
    def n_stations(self) -> np.ndarray:
        return np.bincount(self._ac_of, minlength=self.config.N)

    def stations(self) -> list[StationState]:
        return [
            StationState(int(a), int(b), int(w), int(t), int(c), int(s))
            for a, b, w, t, c, s in zip(self._ac_of, self._backoff, self._aifs_left, self._att, self._coll, self._succ)
        ]

    def add_station(self, ac_index: int, *, quiet: float = 1.0) -> None:
        g = _stream(self.seed, ac_index, int(self._serial[ac_index]))
        self._serial[ac_index] += 1
        self._gens.append(g)
        self._ac_of = np.append(self._ac_of, ac_index)
        self._buf = np.vstack([self._buf, g.random(CHUNK)[None, :]])
        self._ptr = np.append(self._ptr, 0)
        self._qhat = np.append(self._qhat, quiet)
        self._seen = np.append(self._seen, 0)
        self._backoff = np.append(self._backoff, -1)  # drawn on first use
        self._aifs_left = np.append(self._aifs_left, 0)
        self._hol = np.append(self._hol, self.time)
        for name in ("_att", "_succ", "_coll"):
            setattr(self, name, np.append(getattr(self, name), 0))

    def remove_station(self, ac_index: int) -> None:
        """Remove the most recently joined station of ``ac_index``."""
        idx = np.flatnonzero(self._ac_of == ac_index)
        if len(idx) == 0:
            raise ConfigError(f"no station left in AC {ac_index}")
        s = int(idx[-1])
        del self._gens[s]
        for name in ("_ac_of", "_ptr", "_qhat", "_seen", "_backoff", "_aifs_left", "_hol", "_att", "_succ", "_coll"):
            setattr(self, name, np.delete(getattr(self, name), s))
        self._buf = np.delete(self._buf, s, axis=0)

    def _check_windows(self, windows) -> np.ndarray:
        W = np.asarray(windows, dtype=float)
        if W.shape != (self.config.N,):
            raise ValueError(f"windows must have shape ({self.config.N},)")
        active = self.n_stations > 0
        if self.mode == "uniform" and np.any(W[active] < 2):
            raise ConfigError(f"windows must be at least 2, got {W}")
        if np.any(~(W[active] > 1)):
            raise ConfigError(f"windows must exceed 1, got {W}")
        W = np.where(active, W, 2.0)
        for s in np.flatnonzero(self._backoff < 0):
            self._backoff[s] = int(self._gens[s].random() * max(2, int(round(W[self._ac_of[s]]))))
        return W

    def advance(self, windows, until: float, beacon: float = math.inf, rts=None, miss=None, succ=None) -> np.ndarray:
        """Run slots starting before ``until``; returns ``[idle, collision, successes per AC]``.

        Per-beacon counters are accumulated into ``rts``/``miss``/``succ``
        (shape ``(intervals, N)``) using the slot start time.
        """
        if len(self._ac_of) == 0:
            raise ConfigError("no stations to simulate")
        W = self._check_windows(windows)
        N = self.config.N
        if rts is None:
            rts = np.zeros((1, N), dtype=np.int64)
            miss = np.zeros((1, N), dtype=np.int64)
            succ = np.zeros((1, N), dtype=np.int64)
        t_min = int(np.min(self._aifsn[self.n_stations > 0]))
        expo = (self._aifsn - t_min + 1).astype(np.float64)
        wait = np.maximum(self._aifsn - t_min, 0).astype(np.int64)
        glob = np.zeros(2 + N, dtype=np.int64)
        state_t = np.array([self.time])
        code = 0 if self.mode == "persistent" else 1
        tm = self.config.timings
        while True:
            s = _loop(code, self.gain_floor, self._ac_of, expo, wait, W, self._t_succ, tm.t_col, self.config.phy.sigma,
                      float(until), float(beacon), self._buf, self._ptr, self._qhat, self._seen, self._backoff,
                      self._aifs_left, state_t, self._att, self._succ, self._coll, self._hol,
                      self.delay_sum, self.delay_count, rts, miss, succ, glob)
            if s < 0:
                break
            # refill exhausted streams; each stream is consumed strictly in order
            for r in range(len(self._gens)):
                if self._ptr[r] + 2 > CHUNK:
                    left = self._buf[r, self._ptr[r]:].copy()
                    self._buf[r, : len(left)] = left
                    self._buf[r, len(left):] = self._gens[r].random(CHUNK - len(left))
                    self._ptr[r] = 0
        self.time = float(state_t[0])
        return glob

    def run_interval(self, windows, length: float) -> IntervalCounts:
        """Run the next interval of nominal ``length`` and report its counters.

        Interval ends are nominal (multiples of ``length`` from the previous
        boundary), so the slot straddling a boundary does not accumulate drift.
        """
        start = self.time
        self.boundary = max(self.boundary + length, start)
        N = self.config.N
        rts = np.zeros((1, N), dtype=np.int64)
        miss = np.zeros((1, N), dtype=np.int64)
        succ = np.zeros((1, N), dtype=np.int64)
        glob = self.advance(windows, self.boundary, math.inf, rts, miss, succ)
        return IntervalCounts(rts[0], miss[0], succ[0], int(glob[0]), int(glob[1]), glob[2:].copy(), self.time - start)


def run_sim(
    config: NetworkConfig,
    windows,
    duration_us: float,
    seed: int,
    *,
    mode: str = "persistent",
    initial_quiet=None,
    gain_floor: float = EMA_FLOOR,
) -> SimStats:
    """Simulate ``duration_us`` of saturated contention with fixed windows.

    ``windows`` has one entry per AC of ``config`` (entries of empty ACs are
    ignored). In persistent mode each station's estimate of the silent-slot
    probability starts at ``initial_quiet`` (default 1) and is a running mean
    whose gain decays as 1/slots down to ``gain_floor``.
    """
    beacon = float(config.beacon_interval)
    if duration_us < beacon:
        raise ConfigError(f"duration {duration_us} us is shorter than one beacon interval ({beacon} us)")
    sim = Simulator(config, seed, mode=mode, gain_floor=gain_floor, initial_quiet=initial_quiet)
    N = config.N
    n_iv = int(math.ceil(duration_us / beacon)) + 1
    rts = np.zeros((n_iv, N), dtype=np.int64)
    miss = np.zeros((n_iv, N), dtype=np.int64)
    succ = np.zeros((n_iv, N), dtype=np.int64)
    glob = sim.advance(windows, float(duration_us), beacon, rts, miss, succ)

    sim_time = sim.time
    n_iv_used = int(math.ceil(duration_us / beacon))
    ac_of = sim._ac_of
    per_ac = lambda v: np.bincount(ac_of, weights=v, minlength=N)  # noqa: E731
    attempts = per_ac(sim._att)
    successes = per_ac(sim._succ)
    collisions = per_ac(sim._coll)
    slots = int(np.sum(glob))
    n = config.n.astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        tau = np.where(n > 0, attempts / (n * slots), np.nan)
        p_obs = np.where(attempts > 0, collisions / attempts, np.nan)
        thr = np.where(n > 0, successes * config.m * config.phy.packet_bits / (n * sim_time), np.nan)
        delay = np.where(sim.delay_count > 0, sim.delay_sum / sim.delay_count, np.nan)
    trace = IntervalTrace(rts[:n_iv_used], miss[:n_iv_used], succ[:n_iv_used], beacon)
    return SimStats(
        names=config.names,
        n_stations=config.n.copy(),
        attempts=attempts.astype(int),
        successes=successes.astype(int),
        collisions=collisions.astype(int),
        slots=slots,
        idle_slots=int(glob[0]),
        collision_slots=int(glob[1]),
        success_slots=glob[2:].copy(),
        tau=tau,
        p_obs=p_obs,
        throughput=thr,
        mean_delay=delay,
        sim_time=sim_time,
        seed=int(seed),
        mode=mode,
        intervals=trace,
    )
