import numpy as np
import pytest
from scipy import stats

from edcafair import macsim, model, optimizer, presets
from edcafair.errors import ConfigError


def single(name="BE"):
    return presets.network({name: 1}, {name: 1000.0})


@pytest.fixture(scope="module")
def lone():
    return macsim.run_sim(single(), [16], 1e7, seed=3)


def test_single_station_attempt_rate(lone):
    tau = 2 / 17
    half = stats.norm.ppf(0.995) * np.sqrt(tau * (1 - tau) / lone.slots)
    assert abs(lone.tau[0] - tau) <= half
    assert lone.p_obs[0] == 0.0
    assert lone.collisions[0] == 0


def test_single_station_throughput(lone):
    ref = model.throughput([2 / 15], single())[0]
    assert round(ref, 2) == 17.75
    assert lone.throughput[0] == pytest.approx(ref, rel=0.01)


def test_counters_balance(lone):
    assert np.array_equal(lone.successes + lone.collisions, lone.attempts)


def test_time_conservation():
    cfg = presets.table4_case2()
    r = macsim.run_sim(cfg, [9, 12, 20, 30], 3e6, seed=1)
    tm = cfg.timings
    total = r.idle_slots * cfg.phy.sigma + np.sum(r.success_slots * tm.t_succ) + r.collision_slots * tm.t_col
    assert total == pytest.approx(r.sim_time, rel=1e-12)
    assert r.slots == r.idle_slots + r.collision_slots + int(np.sum(r.success_slots))
    assert np.array_equal(r.success_slots, r.successes)


def test_deterministic_given_seed():
    cfg = presets.fig4(3)
    a = macsim.run_sim(cfg, [3, 10], 2e6, seed=11)
    b = macsim.run_sim(cfg, [3, 10], 2e6, seed=11)
    c = macsim.run_sim(cfg, [3, 10], 2e6, seed=12)
    for f in ("attempts", "successes", "collisions", "tau", "throughput", "mean_delay"):
        assert np.array_equal(getattr(a, f), getattr(b, f), equal_nan=True)
    assert np.array_equal(a.intervals.rts, b.intervals.rts)
    assert a.sim_time == b.sim_time
    assert not np.array_equal(a.attempts, c.attempts)


def test_fig4_agrees_with_model():
    pt = optimizer.optimize(presets.fig4(2))
    runs = [macsim.run_sim(pt.config, pt.windows, 2e7, seed=s) for s in range(10)]
    t = stats.t.ppf(0.975, len(runs) - 1)

    def band(values, ref):
        v = np.array(values)
        return np.abs(v.mean(0) - ref) + t * v.std(0, ddof=1) / np.sqrt(len(v))

    assert np.all(band([r.p_obs for r in runs], pt.p_star) <= 0.01)
    assert np.all(band([r.tau for r in runs], pt.attempt.tau) <= 0.01)
    assert np.all(band([r.throughput for r in runs], pt.throughputs) / pt.throughputs <= 0.02)


@pytest.mark.parametrize("rts,miss,expected", [(40, 0, 0.0), (100, 20, 0.2)])
def test_measure_interval_examples(rts, miss, expected):
    assert macsim.measure_interval([rts], [miss])[0] == pytest.approx(expected)


def test_measure_interval_no_sample():
    out = macsim.measure_interval([0, 10], [0, 3])
    assert np.isnan(out[0]) and out[1] == pytest.approx(0.3)


@pytest.mark.parametrize("rts,miss", [([5], [6]), ([-1], [0])])
def test_measure_interval_rejects_bad_counters(rts, miss):
    with pytest.raises(ValueError):
        macsim.measure_interval(rts, miss)


def test_interval_mean_matches_collision_probability():
    cfg = presets.network({"BE": 2}, {"BE": 1000.0})
    r = macsim.run_sim(cfg, [16], 100 * cfg.beacon_interval, seed=5)
    p = np.array([r.intervals.p_obs(k)[0] for k in range(100)])
    ref = model.collision_prob(model.attempt_from_window([16], cfg), cfg)[0]
    half = stats.t.ppf(0.995, len(p) - 1) * p.std(ddof=1) / np.sqrt(len(p))
    assert abs(p.mean() - ref) <= half


def test_trace_covers_duration():
    cfg = presets.fig4(1)
    r = macsim.run_sim(cfg, [4, 8], 5 * cfg.beacon_interval, seed=0)
    assert len(r.intervals.rts) == 5
    assert np.array_equal(r.intervals.rts.sum(0), r.attempts)
    assert np.array_equal(r.intervals.cts_missing.sum(0), r.collisions)


def test_short_duration_rejected():
    cfg = single()
    with pytest.raises(ConfigError):
        macsim.run_sim(cfg, [16], cfg.beacon_interval / 2, seed=0)


@pytest.mark.parametrize("W", [[1.0], [0.5]])
def test_window_must_exceed_one(W):
    with pytest.raises(ConfigError):
        macsim.run_sim(single(), W, 1e6, seed=0)


def test_unknown_mode_rejected():
    with pytest.raises(ConfigError):
        macsim.run_sim(single(), [16], 1e6, seed=0, mode="exact")


def test_streams_unaffected_by_other_stations():
    small = macsim.Simulator(presets.fig4(1), seed=7)
    big = macsim.Simulator(presets.fig4(4), seed=7)
    assert np.array_equal(small._buf[0], big._buf[0])
    assert np.array_equal(small._buf[1], big._buf[1])


def test_added_station_gets_fresh_stream():
    sim = macsim.Simulator(presets.fig4(1), seed=7)
    sim.add_station(1)
    sim.remove_station(1)
    sim.add_station(1)
    ref = macsim.Simulator(presets.fig4(3), seed=7)
    assert np.array_equal(sim._buf[-1], ref._buf[-1])
    assert not np.array_equal(sim._buf[-1], sim._buf[1])


def test_simulator_intervals_match_run_sim_totals():
    cfg = presets.fig4(2)
    sim = macsim.Simulator(cfg, seed=4)
    parts = [sim.run_interval([2, 9], cfg.beacon_interval) for _ in range(10)]
    ref = macsim.run_sim(cfg, [2, 9], 10 * cfg.beacon_interval, seed=4)
    assert np.array_equal(sum(p.rts for p in parts), ref.attempts)
    assert np.array_equal(sum(p.successes for p in parts), ref.successes)
    assert sim.time == ref.sim_time


def test_remove_missing_station_rejected():
    sim = macsim.Simulator(presets.fig4(1), seed=0)
    sim.remove_station(0)
    with pytest.raises(ConfigError):
        sim.remove_station(0)


def test_topology_change_tracks_new_collision_level():
    cfg = presets.network({"BE": 2}, {"BE": 1000.0})
    sim = macsim.Simulator(cfg, seed=2)
    for _ in range(30):
        sim.run_interval([16], cfg.beacon_interval)
    sim.add_station(0)
    sim.add_station(0)
    for _ in range(20):
        sim.run_interval([16], cfg.beacon_interval)
    p = np.mean([sim.run_interval([16], cfg.beacon_interval).p_obs[0] for _ in range(50)])
    four = cfg.with_stations(0, 4)
    ref = model.collision_prob(model.attempt_from_window([16], four), four)[0]
    assert p == pytest.approx(ref, abs=0.02)


def test_uniform_mode_runs_and_balances():
    cfg = presets.fig4(2)
    r = macsim.run_sim(cfg, [4, 10], 2e6, seed=1, mode="uniform")
    assert np.array_equal(r.successes + r.collisions, r.attempts)
    assert np.all((r.p_obs >= 0) & (r.p_obs <= 1))
    with pytest.raises(ConfigError):
        macsim.run_sim(cfg, [1.5, 10], 2e6, seed=1, mode="uniform")


def test_probabilities_in_unit_interval():
    cfg = presets.table4_case2()
    r = macsim.run_sim(cfg, [5, 9, 12, 30], 2e6, seed=9)
    assert np.all((r.tau > 0) & (r.tau < 1))
    assert np.all((r.p_obs >= 0) & (r.p_obs <= 1))
    assert 0 < r.idle_fraction < 1
