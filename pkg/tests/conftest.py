import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pdrecon import forward, phantom
from pdrecon.grid import Grid3

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_spd(rng, n=None, cond=50.0):
    """SPD matrices with eigenvalues in [1, cond] and random orientation."""
    shape = () if n is None else (n,)
    Q, _ = np.linalg.qr(rng.standard_normal(shape + (3, 3)))
    lam = rng.uniform(1.0, cond, shape + (3,))
    return np.einsum("...ij,...j,...kj->...ik", Q, lam, Q)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_data(kind, n, keys, mode="same-grid"):
    spec = phantom.PhantomSpec(kind)
    return forward.generate(lambda p: phantom.evaluate(spec, p), Grid3.cube(n), keys, mode=mode)


EXP2_KEYS = ["x", "y", "z", "(x+2)(y+2)", "(z+2)(x+2)"]


@pytest.fixture(scope="session")
def exp1_small():
    return make_data("gamma1", 24, ["x", "y", "z"])


@pytest.fixture(scope="session")
def exp2_small():
    return make_data("gamma2", 24, EXP2_KEYS)


@pytest.fixture(scope="session")
def exp2_pair():
    """Exp. 2 data on two grids for O(h) comparisons."""
    return make_data("gamma2", 17, EXP2_KEYS), make_data("gamma2", 33, EXP2_KEYS)


# one line per acceptance criterion, echoed at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
