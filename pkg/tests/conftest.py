import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def compiled():
    """Trigger kernel compilation once so timed tests measure run time only."""
    from ktap import IntegratorConfig, WealthGameParams, build_model, integrate, PopulationState

    for m in (1, 3):
        model = build_model(9, m, WealthGameParams(3), beta=0.4, u0=-0.1)
        f = np.full((m, 9), 1.0 / (9 * m))
        integrate(PopulationState(f), model, IntegratorConfig(dt=0.1, t_max=0.3, sample_every=1))
    return True


@pytest.fixture
def record_acceptance():
    def record(number: int, passed: bool, detail: str):
        ACCEPTANCE_LINES[number] = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
