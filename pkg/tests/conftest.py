import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tflow.algebra import LDIM

settings.register_profile("tflow", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("tflow")


def random_density(rng, dim=4):
    A = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = A @ A.conj().T
    return rho / np.trace(rho)


def hp_part(S):
    """Hermiticity-preserving projection of a superoperator in column-stacked form."""
    S4 = S.reshape(S.shape[:-2] + (4, 4, 4, 4))
    swapped = np.conj(S4.swapaxes(-1, -2).swapaxes(-3, -4))
    return (0.5 * (S4 + swapped)).reshape(S.shape)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_superop(rng):
    def make(*batch):
        return rng.normal(size=batch + (LDIM, LDIM)) + 1j * rng.normal(size=batch + (LDIM, LDIM))
    return make


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
