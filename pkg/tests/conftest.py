import numpy as np
import pytest
from hypothesis import settings

from mgsolve import _backend

settings.register_profile("default", deadline=None, max_examples=25)
settings.load_profile("default")


@pytest.fixture(params=_backend.available())
def backend(request):
    """Run the test once per importable kernel implementation."""
    previous = _backend.use(request.param)
    yield request.param
    _backend.use(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE_LINES = []


class AcceptanceRecorder:
    def record(self, number, passed, detail):
        status = "PASS" if passed else "FAIL"
        _ACCEPTANCE_LINES.append((number, f"criterion {number:>2}: {status}  {detail}"))
        return passed

    def skip(self, number, detail):
        _ACCEPTANCE_LINES.append((number, f"criterion {number:>2}: SKIP  {detail}"))


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceRecorder()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
