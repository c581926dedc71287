import numpy as np
import pytest

from streamtta.adapter import refactorize
from streamtta.core import AdapterState, PrototypeSet

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_state(mu, sigma, pi, epsilon=0.0, n_total=1.0):
    """A state with N_y = n_total * pi and a freshly factorized precision."""
    mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
    pi = np.asarray(pi, dtype=np.float64)
    state = AdapterState(
        mu=mu,
        sigma=sigma,
        precision=np.empty_like(sigma),
        pi=pi,
        n_eff=pi * n_total,
        n_total=n_total,
        epsilon=epsilon,
    )
    return refactorize(state)


def random_spd(rng, d, lo=0.2, hi=2.0):
    q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    a = (q * rng.uniform(lo, hi, size=d)) @ q.T
    return 0.5 * (a + a.T)


def random_state(rng, k, d, epsilon=1e-4):
    pi = rng.dirichlet(np.ones(k)) * 0.98 + 0.02 / k
    return make_state(rng.normal(size=(k, d)), random_spd(rng, d), pi / pi.sum(), epsilon)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def orthonormal_protos():
    return PrototypeSet.from_vectors(np.eye(4))
