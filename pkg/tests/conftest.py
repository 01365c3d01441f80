import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = []


@pytest.fixture
def accept():
    """Record one acceptance line: accept(number, ok, detail); ok=None marks an exclusion."""
    def record(number, ok, detail):
        status = "EXCLUDED" if ok is None else ("PASS" if ok else "FAIL")
        _ACCEPTANCE.append(f"criterion {number:>2}: {status}  {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
