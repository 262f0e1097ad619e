import numpy as np
import pytest

from edcafair import presets
from edcafair.model import AcParams, NetworkConfig

NAMES = ("BK", "BE", "VI", "VO")


def random_config(rng, max_acs=4, max_n=4, min_total=1):
    """A random active configuration on the OFDM preset."""
    while True:
        k = int(rng.integers(1, max_acs + 1))
        acs = tuple(
            AcParams(
                name=NAMES[i],
                aifsn=int(rng.integers(1, 8)),
                txop_limit=float(rng.choice([0.0, 1504.0, 3008.0])),
                delay_deadline=float(rng.uniform(200, 5000)),
                n_stations=int(rng.integers(1, max_n + 1)),
            )
            for i in range(k)
        )
        if sum(a.n_stations for a in acs) >= min_total:
            return NetworkConfig(phy=presets.OFDM_54, acs=acs)


def fd_jacobian(f, x, h):
    """Central-difference Jacobian, ``J[:, k] = df/dx_k``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((np.atleast_1d(f(x + e)) - np.atleast_1d(f(x - e))) / (2 * h))
    return np.column_stack(cols)


def rowwise_rel_error(a, ref):
    """Largest per-row error, relative to the largest entry of that row."""
    a, ref = np.atleast_2d(a), np.atleast_2d(ref)
    scale = np.max(np.abs(ref), axis=1, keepdims=True)
    scale[scale == 0] = 1.0
    return float(np.max(np.abs(a - ref) / scale))


@pytest.fixture
def rng():
    return np.random.default_rng(20260101)


@pytest.fixture(scope="session")
def case1():
    return presets.table4_case1()


@pytest.fixture(scope="session")
def case2():
    return presets.table4_case2()
