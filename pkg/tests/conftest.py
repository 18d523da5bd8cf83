import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("thorough", max_examples=300, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def random_orbitals(L, N, seed=0):
    """Seeded random orthonormal L x N complex orbital matrix."""
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(L, N)) + 1j * rng.normal(size=(L, N))
    Q, _ = np.linalg.qr(A)
    return Q


@pytest.fixture
def orbitals():
    return random_orbitals


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
