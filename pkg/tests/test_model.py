import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edcafair import model, presets
from edcafair.errors import ConfigError, SolverError
from edcafair.model import AcParams, AttemptVector, NetworkConfig, PhyParams

from conftest import fd_jacobian, random_config, rowwise_rel_error

PHY = presets.OFDM_54


def single(name="BE", n=1, deadline=1000.0, aifsn=None, txop=None):
    a, t = presets.EDCA_OFDM[name]
    ac = AcParams(name, a if aifsn is None else aifsn, t if txop is None else txop, deadline, n)
    return NetworkConfig(phy=PHY, acs=(ac,))


# --- parameters and timings ----------------------------------------------


def test_timings_hand_sums(case1):
    tm = case1.timings
    assert tm.t_col == pytest.approx(46.67 + 88.67, abs=1e-9)
    assert tm.t_col == pytest.approx(135.34, abs=1e-9)
    assert tm.t_oo == pytest.approx(20 + 2 * 16 + 38.67, abs=1e-9)
    assert tm.t_oo == pytest.approx(90.67, abs=1e-9)
    assert tm.aifs == pytest.approx([16 + 3 * 9, 16 + 2 * 9, 16 + 2 * 9, 16 + 7 * 9])


def test_best_effort_success_time():
    tm = single("BE").timings
    # RTS + CTS + 2 SIFS + AIFS, then one packet
    assert tm.t_o[0] == pytest.approx(144.34, abs=1e-9)
    assert tm.t_succ[0] == pytest.approx(144.34 + 90.67 + 8000 / 54, abs=1e-9)
    assert round(tm.t_succ[0], 2) == 383.16


@pytest.mark.parametrize("name,m", [("BE", 1), ("BK", 1), ("VI", 12), ("VO", 6)])
def test_burst_sizes(name, m):
    aifsn, txop = presets.EDCA_OFDM[name]
    assert model.txop_burst_size(AcParams(name, aifsn, txop, 100.0, 1), PHY) == m


def test_explicit_burst_size_wins():
    ac = AcParams("VI", 2, 3008.0, 100.0, 1, burst_size=3)
    assert model.txop_burst_size(ac, PHY) == 3


def test_eifs_identity_enforced():
    with pytest.raises(ConfigError):
        PhyParams(9, 16, 34, 90.0, 20, 46.67, 38.67, 38.67, 54, 8000)


@pytest.mark.parametrize(
    "kwargs",
    [dict(aifsn=0), dict(n_stations=-1), dict(delay_deadline=0.0), dict(burst_size=0), dict(txop_limit=-1.0)],
)
def test_ac_validation(kwargs):
    base = dict(name="BE", aifsn=3, txop_limit=0.0, delay_deadline=100.0, n_stations=1)
    base.update(kwargs)
    with pytest.raises(ConfigError):
        AcParams(**base)


def test_network_needs_a_station():
    ac = AcParams("BE", 3, 0.0, 100.0, 0)
    with pytest.raises(ConfigError):
        NetworkConfig(phy=PHY, acs=(ac,))


def test_t_min_ignores_empty_acs():
    cfg = presets.adaptivity_config()
    assert cfg.t_min == 2
    sub, idx = cfg.active()
    assert list(idx) == [0, 1, 2]
    assert sub.names == ("BE", "VI", "VO")


def test_inactive_acs_rejected_by_model():
    cfg = presets.adaptivity_config()
    with pytest.raises(ConfigError):
        model.collision_prob(np.full(4, 0.1), cfg)


def test_attempt_vector_views_agree():
    a = AttemptVector.from_tau([0.1, 0.5, 0.9])
    assert a.alpha == pytest.approx([1 / 9, 1.0, 9.0], rel=1e-12)
    assert np.exp(a.eta) == pytest.approx(a.alpha, rel=1e-12)
    with pytest.raises(ValueError):
        AttemptVector(alpha=np.array([1.0]), tau=np.array([0.4]), eta=np.array([0.0]))
    with pytest.raises(ValueError):
        AttemptVector.from_tau([1.0])


# --- attempt probabilities -------------------------------------------------


def test_single_station_fixed_point():
    a = model.attempt_from_window([16], single())
    assert a.tau[0] == pytest.approx(2 / 17, abs=1e-12)
    assert model.collision_prob(a, single())[0] == 0.0


def test_large_windows_drive_attempts_to_zero(case1):
    small = model.attempt_from_window(np.full(4, 1e3), case1).tau
    tiny = model.attempt_from_window(np.full(4, 1e6), case1).tau
    assert np.all(tiny < small) and np.all(tiny < 1e-5)


def _damped_oracle(W, n, e):
    tau = 2 / (np.asarray(W) + 1.0)
    for _ in range(200_000):
        p0 = np.array([(1 - tau[i]) ** (n[i] - 1) * np.prod([(1 - tau[j]) ** n[j] for j in range(len(n)) if j != i]) for i in range(len(n))])
        new = 2 * p0**e / (2 * p0**e + np.asarray(W) - 1)
        if np.max(np.abs(new - tau)) < 1e-15:
            break
        tau = 0.9 * tau + 0.1 * new
    return tau


def test_two_ac_fixed_point_against_oracle():
    acs = (AcParams("BE", 3, 0.0, 900.0, 2), AcParams("VI", 2, 0.0, 300.0, 2))
    cfg = NetworkConfig(phy=PHY, acs=acs)
    tau = model.attempt_from_window([32, 16], cfg).tau
    assert tau == pytest.approx(_damped_oracle([32, 16], [2, 2], np.array([2, 1])), abs=1e-8)
    assert np.max(np.abs(model.attempt_residual(tau, [32, 16], cfg))) <= 1e-10


def test_fixed_point_rejects_bad_windows(case1):
    with pytest.raises(ConfigError):
        model.attempt_from_window([1.0, 16, 16, 16], case1)
    with pytest.raises(ValueError):
        model.attempt_from_window([16, 16], case1)


def test_fixed_point_iteration_cap_reports_residual(case1):
    with pytest.raises(SolverError) as err:
        model.attempt_from_window([2, 2, 2, 2], case1, max_iter=2)
    assert err.value.residual > 0
    assert err.value.history


def test_window_from_alpha_single_station():
    assert model.window_from_alpha([2 / 15], single())[0] == pytest.approx(16.0, rel=1e-14)
    assert model.window_from_alpha([1e9], single())[0] == pytest.approx(1.0, abs=1e-8)


def test_consistency_triple_random(rng):
    for _ in range(200):
        cfg = random_config(rng)
        W = rng.uniform(2, 200, cfg.N)
        W2 = model.window_from_alpha(model.attempt_from_window(W, cfg), cfg)
        assert W2 == pytest.approx(W, rel=1e-8)


def test_rounded_window_roundtrip(case1):
    alpha = np.array([0.1, 0.05, 0.1, 0.08])
    W = np.round(model.window_from_alpha(alpha, case1))
    tau = model.attempt_from_window(W, case1).tau
    assert model.window_from_alpha(tau / (1 - tau), case1) == pytest.approx(W, rel=1e-8)


def test_attempt_decreases_with_own_window(rng):
    for _ in range(100):
        cfg = random_config(rng)
        W = rng.uniform(2, 100, cfg.N)
        i = int(rng.integers(cfg.N))
        base = model.attempt_from_window(W, cfg).tau[i]
        W[i] += 0.5
        assert model.attempt_from_window(W, cfg).tau[i] < base


# --- collision, throughput, air-time ---------------------------------------


def test_collision_probability_small_cases():
    assert model.collision_prob([0.1], single(n=2))[0] == pytest.approx(0.1, abs=1e-15)
    cfg = presets.fig4(3)
    tau = np.array([0.2, 0.05])
    brute = [1 - 0.8**0 * 0.95**3, 1 - 0.8 * 0.95**2]
    assert model.collision_prob(tau, cfg) == pytest.approx(brute, rel=1e-13)


def test_single_station_throughput():
    cfg = single()
    alpha = 2 / 15
    s = model.throughput([alpha], cfg)[0]
    tm = cfg.timings
    assert s == pytest.approx(alpha * 8000 / (9 + alpha * tm.t_succ[0]), rel=1e-12)
    assert round(s, 2) == 17.75
    assert model.throughput([1e9], cfg)[0] == pytest.approx(8000 / tm.t_succ[0], rel=1e-6)


def test_throughput_vanishes_with_attempts(case1):
    alpha = np.array([0.3, 0.1, 0.1, 1e-12])
    assert model.throughput(alpha, case1)[3] < 1e-9


def test_throughput_identity(rng):
    for _ in range(100):
        cfg = random_config(rng)
        alpha = np.exp(rng.uniform(-5, 1, cfg.N))
        s = model.throughput(alpha, cfg)
        lhs = np.sum(cfg.n * s) * cfg.timings.t_col * model.x_value(alpha, cfg) / cfg.phy.packet_bits
        assert lhs == pytest.approx(np.sum(cfg.n * cfg.m * alpha), rel=1e-12)


def test_single_station_airtime():
    cfg = single()
    alpha = 0.2
    ts = cfg.timings.t_succ[0]
    assert model.airtime([alpha], cfg)[0] == pytest.approx(alpha * ts / (9 + alpha * ts), rel=1e-12)


def test_airtime_in_unit_interval(rng):
    for _ in range(100):
        cfg = random_config(rng)
        t = model.airtime(np.exp(rng.uniform(-6, 2, cfg.N)), cfg)
        assert np.all((t > 0) & (t < 1))


def test_x_gradient_matches_differences(rng):
    worst = 0.0
    for _ in range(100):
        cfg = random_config(rng)
        eta = rng.uniform(-5, 2, cfg.N)
        fd = fd_jacobian(lambda e: model.x_value(np.exp(e), cfg), eta, 1e-5)
        worst = max(worst, rowwise_rel_error(model.x_gradient(np.exp(eta), cfg), fd[0]))
    assert worst <= 1e-6


# --- delay -----------------------------------------------------------------


def test_single_station_delay():
    cfg = single()
    alpha = 2 / 15
    d = model.delay([alpha], cfg, 0)[0]
    assert d == pytest.approx(16 * 9 / 2 + cfg.timings.t_succ[0], rel=1e-12)
    assert round(d, 2) == 455.16
    comps = model.delay_components([alpha], cfg, 0)
    assert comps.blocking[0] == 0 and comps.retransmission[0] == 0


@pytest.mark.parametrize("M", [0, 1, 3, 7])
def test_single_station_delay_any_retry_limit(M):
    cfg = single()
    assert model.delay([2 / 15], cfg, M)[0] == pytest.approx(72 + cfg.timings.t_succ[0], rel=1e-12)


def test_closed_form_equals_component_sum(rng):
    worst = 0.0
    for _ in range(1000):
        cfg = random_config(rng, max_n=5)
        alpha = np.exp(rng.uniform(-6, 1.5, cfg.N))
        a = model.delay(alpha, cfg, 0)
        b = model.delay_components(alpha, cfg, 0).total
        worst = max(worst, float(np.max(np.abs(a - b) / b)))
    assert worst <= 1e-9


def test_retry_limit_increases_countdown(case1):
    alpha = np.array([0.3, 0.05, 0.1, 0.2])
    d0 = model.delay_components(alpha, case1, 0)
    d3 = model.delay_components(alpha, case1, 3)
    assert np.all(d3.countdown > d0.countdown)
    assert np.all(d3.success > d0.success)


def test_delay_jacobian_matches_differences(rng):
    worst = 0.0
    for _ in range(100):
        cfg = random_config(rng)
        eta = rng.uniform(-5, 1.5, cfg.N)
        fd = fd_jacobian(lambda e: model.delay(np.exp(e), cfg, 0), eta, 1e-5)
        worst = max(worst, rowwise_rel_error(model.delay_jacobian(np.exp(eta), cfg), fd))
    assert worst <= 1e-6


# --- properties ---------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(
    n=st.lists(st.integers(1, 4), min_size=1, max_size=4),
    aifsn=st.lists(st.integers(1, 7), min_size=4, max_size=4),
    eta=st.lists(st.floats(-6, 2), min_size=4, max_size=4),
)
def test_probabilities_well_formed(n, aifsn, eta):
    acs = tuple(AcParams(f"A{i}", aifsn[i], 0.0, 1000.0, k) for i, k in enumerate(n))
    cfg = NetworkConfig(phy=PHY, acs=acs)
    alpha = np.exp(np.array(eta[: len(n)]))
    p = model.collision_prob(AttemptVector.from_alpha(alpha), cfg)
    assert np.all((p >= 0) & (p < 1))
    assert 0 < model.idle_prob(alpha, cfg) < 1
    assert np.all(model.window_from_alpha(alpha, cfg) >= 1)
    assert np.all(model.delay(alpha, cfg, 0) > 0)


def test_relabeling_permutes_outputs(case1):
    perm = [2, 0, 3, 1]
    shuffled = NetworkConfig(phy=PHY, acs=tuple(case1.acs[i] for i in perm))
    alpha = np.array([0.3, 0.05, 0.1, 0.2])
    for f in (model.throughput, model.airtime, model.collision_prob, model.window_from_alpha):
        assert f(alpha[perm], shuffled) == pytest.approx(f(alpha, case1)[perm], rel=1e-12)
    assert model.delay(alpha[perm], shuffled, 0) == pytest.approx(model.delay(alpha, case1, 0)[perm], rel=1e-12)
