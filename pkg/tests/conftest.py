import numpy as np
import pytest

from gfmgfl.casefile import build_system, case_from_dict, load_case
from gfmgfl.synth import COUPLED, random_case


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def demo():
    return build_system(load_case("demo_2p1"))


@pytest.fixture(scope="session")
def decoupled():
    return build_system(load_case("decoupled_3p2"))


@pytest.fixture(scope="session")
def coupled():
    return build_system(load_case("coupled_3p2"))


def random_system(seed, n, m, phi=0.0, ranges=None, approximate=False):
    rng = np.random.default_rng(seed)
    kw = {} if ranges is None else {"ranges": ranges}
    return build_system(case_from_dict(random_case(rng, n, m, phi=phi, **kw)), approximate=approximate)


def random_coupled(seed, n, m):
    return random_system(seed, n, m, phi=-0.5, ranges=COUPLED)


def single_gfl(x=0.2, i_d=1.0, i_q=0.0, kP=15.0, kI=3500.0, tau=0.0):
    """One GFL behind reactance x from an infinite bus, angles zero."""
    return {
        "buses": ["a", "grid"],
        "lines": [{"from": "a", "to": "grid", "x": x, "r": tau * x}],
        "tau": tau,
        "infinite_bus": "grid",
        "converters": [{"node": "a", "kind": "GFL", "kP": kP, "kI": kI, "i_d": i_d, "i_q": i_q}],
        "operating_point": {"V": [1.0], "theta": [0.0], "i_d": [i_d], "i_q": [i_q]},
    }
