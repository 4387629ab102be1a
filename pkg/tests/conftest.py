import numpy as np
import pytest
from hypothesis import settings

from cica.tensor import DiagonalTensor4, SymmetricTensor4, multilinear_transform, n_unique

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def random_symmetric(n, rng) -> SymmetricTensor4:
    return SymmetricTensor4(n, rng.standard_normal(n_unique(n)))


def random_orth(n, rng) -> np.ndarray:
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))


def random_member(n, rng, kappa=None):
    """Model-set member with its factors."""
    if kappa is None:
        kappa = rng.choice([-1.0, 1.0], n) * rng.uniform(0.5, 3.0, n)
    S = DiagonalTensor4(np.asarray(kappa, dtype=float))
    Q = random_orth(n, rng)
    return multilinear_transform(S, Q), S, Q


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
