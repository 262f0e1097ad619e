import numpy as np
import pytest

from edcafair import control, lqi, macsim, presets
from edcafair.control import ScenarioEvent, run_closed_loop
from edcafair.errors import ConfigError

WEIGHTS = lqi.Weights(presets.Q1, presets.Q2, presets.RHO, None, None)
BEACON = 100_000.0


@pytest.mark.parametrize("kw", [dict(time_us=0, action="join", ac_index=0), dict(time_us=-1, action="add-station", ac_index=0)])
def test_event_validation(kw):
    with pytest.raises(ConfigError):
        ScenarioEvent(**kw)


def test_scenario_order_and_removal_checked():
    cfg = presets.fig4(1)
    with pytest.raises(ConfigError):
        control.validate_scenario(cfg, [ScenarioEvent(2e5, "add-station", 1), ScenarioEvent(1e5, "add-station", 1)])
    with pytest.raises(ConfigError):
        control.validate_scenario(cfg, [ScenarioEvent(1e5, "remove-station", 1), ScenarioEvent(2e5, "remove-station", 1)])
    with pytest.raises(ConfigError):
        control.validate_scenario(cfg, [ScenarioEvent(1e5, "add-station", 5)])


def test_trace_length_and_clamp():
    # W*_BE < 2 here, so the lower clamp is exercised
    run = run_closed_loop(presets.tuning_config(), [], WEIGHTS, seed=0, duration_us=3.05e6)
    assert len(run) == 30
    W = run.stack("w_applied")
    assert run.points[0].windows[0] < 2
    assert np.all(W >= lqi.W_MIN) and np.all(W <= lqi.W_MAX)
    assert np.array_equal(W, np.round(W))
    assert [r.k for r in run.records] == list(range(30))


@pytest.mark.parametrize("cfg", [presets.fig4(2), presets.fig4(5), presets.tuning_config()])
def test_linear_loopback_reproduces_linear_simulation(cfg):
    run = run_closed_loop(cfg, [], WEIGHTS, seed=0, duration_us=60 * BEACON, plant="linear")
    seg = control._Segment(cfg, WEIGHTS, 0.1)
    p0 = seg.plant.predict(lqi.window_from_control(seg.plant.w_star, np.zeros(seg.plant.N)))
    ref = lqi.simulate_linear(seg.ctrl, seg.plant, 60, p0=p0)
    assert np.array_equal(run.stack("p_used"), ref["p"])
    assert np.array_equal(run.stack("w_applied")[1:], ref["w"][:-1])


def test_deterministic_given_seed():
    a = run_closed_loop(presets.fig4(2), [], WEIGHTS, seed=3, duration_us=2e6)
    b = run_closed_loop(presets.fig4(2), [], WEIGHTS, seed=3, duration_us=2e6)
    assert np.array_equal(a.stack("w_applied"), b.stack("w_applied"))
    assert np.array_equal(a.stack("p_obs"), b.stack("p_obs"), equal_nan=True)


def test_first_interval_uses_rounded_optimum():
    run = run_closed_loop(presets.fig4(2), [], WEIGHTS, seed=1, duration_us=2e6)
    assert np.array_equal(run.records[0].w_applied, lqi.window_from_control(run.points[0].windows, 0))
    assert np.all(run.records[0].integrator == 0)


def test_single_station_bypasses_controller():
    cfg = presets.network({"BE": 1}, {"BE": 1000.0})
    run = run_closed_loop(cfg, [], WEIGHTS, seed=0, duration_us=1e6)
    W = run.stack("w_applied")
    assert np.all(W == lqi.window_from_control(run.points[0].windows, 0))
    assert np.all(run.stack("integrator") == 0)


def test_topology_events_redesign_and_reset():
    cfg = presets.adaptivity_config()
    events = [ScenarioEvent(5 * BEACON, "add-station", 2), ScenarioEvent(10 * BEACON, "add-station", 3)]
    run = run_closed_loop(cfg, events, WEIGHTS, seed=2, duration_us=15 * BEACON)
    assert run.aborted is None
    assert len(run.points) == 3
    n = run.stack("n_stations")
    assert n[4].tolist() == [1, 2, 1, 0] and n[5].tolist() == [1, 2, 2, 0] and n[10].tolist() == [1, 2, 2, 1]
    assert np.all(run.records[5].integrator[:3] == 0) and np.all(run.records[10].integrator == 0)
    assert np.any(run.records[4].integrator != 0)
    # empty ACs carry NaN markers
    assert np.isnan(run.records[0].p_obs[3]) and np.isnan(run.records[0].p_star[3])
    assert not np.isnan(run.records[10].p_star[3])
    assert np.array_equal(run.records[5].p_star[:3], run.points[1].p_star)


def test_event_between_beacons_applies_at_next_boundary():
    events = [ScenarioEvent(3.5 * BEACON, "add-station", 1)]
    run = run_closed_loop(presets.fig4(1), events, WEIGHTS, seed=0, duration_us=6 * BEACON)
    assert [int(r.n_stations[1]) for r in run.records] == [1, 1, 1, 1, 2, 2]


def test_infeasible_redesign_aborts_with_partial_trace():
    cfg = presets.network({"BE": 2, "VI": 1}, {"BE": 360.0, "VI": 250.0})
    run = run_closed_loop(cfg, [ScenarioEvent(4 * BEACON, "remove-station", 0)], WEIGHTS, seed=0, duration_us=10 * BEACON)
    assert len(run) == 4
    assert run.aborted is not None and "beacon 4" in run.aborted


def test_missing_sample_holds_previous(monkeypatch):
    real = macsim.Simulator.run_interval
    calls = []

    def flaky(self, windows, length):
        c = real(self, windows, length)
        calls.append(c)
        if len(calls) in (1, 4):
            zero = np.zeros_like(c.rts)
            return macsim.IntervalCounts(zero, zero, c.successes, c.idle_slots, c.collision_slots, c.success_slots, c.elapsed)
        return c

    monkeypatch.setattr(macsim.Simulator, "run_interval", flaky)
    run = run_closed_loop(presets.fig4(2), [], WEIGHTS, seed=0, duration_us=6 * BEACON)
    r = run.records
    assert np.all(np.isnan(r[0].p_obs)) and np.array_equal(r[0].p_used, r[0].p_star)
    assert np.all(np.isnan(r[3].p_obs)) and np.array_equal(r[3].p_used, r[2].p_obs)


def test_unknown_plant_rejected():
    with pytest.raises(ConfigError):
        run_closed_loop(presets.fig4(1), [], WEIGHTS, seed=0, duration_us=1e6, plant="ns3")


def test_short_duration_rejected():
    with pytest.raises(ConfigError):
        run_closed_loop(presets.fig4(1), [], WEIGHTS, seed=0, duration_us=BEACON / 2)
