import math

import numpy as np
import pytest

from cropmesh.propagation import ModeFit, Mode, ThroughputModel, fixture_model


@pytest.fixture(scope="session")
def model():
    return fixture_model()


@pytest.fixture(scope="session")
def toy_model():
    # T(d) = 12 - 2 ln d, zero from e^6 on
    fit = ModeFit(12.0, -2.0, math.exp(6))
    return ThroughputModel({m: fit for m in Mode})


def line_positions(xs):
    xs = np.asarray(xs, float)
    return np.column_stack([xs, np.zeros_like(xs)])


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""
    log = request.config.stash.setdefault(_VERDICTS, [])

    def record(number, ok, detail):
        log.append((number, bool(ok), detail))
        assert ok, f"criterion {number}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter, config):
    log = config.stash.get(_VERDICTS, [])
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(log, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
