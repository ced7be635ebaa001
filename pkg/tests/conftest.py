import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from funnelplan import default_library

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def lib():
    return default_library()


def random_spd(rng, n, lo=0.2, hi=5.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return Q @ np.diag(rng.uniform(lo, hi, n)) @ Q.T


@pytest.fixture
def verdict(request):
    """Record one pass/fail line per acceptance criterion for the terminal summary."""
    lines = request.config.stash.setdefault(_VERDICTS, {})

    def record(name, passed, detail):
        lines[name] = f"{name}: {'PASS' if passed else 'FAIL'}  {detail}"
        return passed

    return record


_VERDICTS = pytest.StashKey[dict]()


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
