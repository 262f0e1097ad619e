"""Built-in PHY constants, EDCA parameter sets and evaluation scenarios."""
from __future__ import annotations

from .model import AcParams, NetworkConfig, PhyParams

# 802.11 OFDM PHY at 54 Mbps with 8000-bit packets.
OFDM_54 = PhyParams(
    sigma=9.0,
    sifs=16.0,
    difs=34.0,
    eifs=88.67,
    t_phyhdr=20.0,
    t_rts=46.67,
    t_cts=38.67,
    t_ack=38.67,
    rate_mbps=54.0,
    packet_bits=8000.0,
)

PHY_PRESETS = {"ofdm-54": OFDM_54}

# name -> (AIFSN, max TXOP in us)
EDCA_OFDM = {
    "BK": (7, 0.0),
    "BE": (3, 0.0),
    "VI": (2, 3008.0),
    "VO": (2, 1504.0),
}

# standard minimum windows (CWmin + 1) for the OFDM PHY
EDCA_DEFAULT_WINDOW = {"BK": 16, "BE": 16, "VI": 8, "VO": 4}


def ac(name: str, n_stations: int, deadline: float) -> AcParams:
    aifsn, txop = EDCA_OFDM[name]
    return AcParams(name=name, aifsn=aifsn, txop_limit=txop, delay_deadline=deadline, n_stations=n_stations)


def network(stations: dict[str, int], deadlines: dict[str, float], phy: PhyParams = OFDM_54) -> NetworkConfig:
    return NetworkConfig(phy=phy, acs=tuple(ac(k, stations[k], deadlines[k]) for k in stations))


def table4_case1() -> NetworkConfig:
    return network({"BE": 1, "VI": 2, "VO": 2, "BK": 1}, {"BE": 900, "VI": 300, "VO": 250, "BK": 1800})


def table4_case2() -> NetworkConfig:
    return network({"BE": 1, "VI": 2, "VO": 2, "BK": 1}, dict.fromkeys(("BE", "VI", "VO", "BK"), 5000.0))


def fig4(n_vi: int, n_be: int = 1) -> NetworkConfig:
    return network({"BE": n_be, "VI": n_vi}, {"BE": 1000, "VI": 250})


def tuning_config() -> NetworkConfig:
    """Three-AC network used for the Q/R tuning study."""
    return network({"BE": 1, "VI": 2, "VO": 1}, {"BE": 900, "VI": 300, "VO": 250})


def adaptivity_config() -> NetworkConfig:
    """Initial topology of the join/leave scenario; BK starts empty."""
    return network({"BE": 1, "VI": 2, "VO": 1, "BK": 0}, {"BE": 900, "VI": 300, "VO": 250, "BK": 1800})


# Published defaults for the LQI weights and sampling period (seconds).
Q1, Q2, RHO = 750.0, 2000.0, 0.005
TS_SECONDS = 0.1

TABLE4 = {
    "case1": {"BE": 0.1565, "VI": 0.1530, "VO": 0.1550, "BK": 0.1562, "sum": 0.9287},
    "case2": {"BE": 0.1667, "VI": 0.1667, "VO": 0.1667, "BK": 0.1667, "sum": 1.0},
}
