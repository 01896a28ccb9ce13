import numpy as np
import pytest

from stressnav.geometry import table2_scenario
from stressnav.sensors import SensorArray, StressReading
from stressnav.stokes import solve_flow


def band_limited(n, coeffs_n, coeffs_t, offset=0.0):
    """Sample f(theta) = sum_k A_k cos(k theta + phi_k) at n sensors shifted by ``offset``.

    ``coeffs_*`` map k -> (A_k, phi_k); returns the reading and the callable pair.
    """
    th = 2 * np.pi * np.arange(n) / n

    def make(coeffs):
        return lambda t: sum(a * np.cos(k * (np.asarray(t) + offset) + ph) for k, (a, ph) in coeffs.items()) + 0 * np.asarray(t, float)

    fn, ft = make(coeffs_n), make(coeffs_t)
    return StressReading(fn(th), ft(th)), fn, ft


@pytest.fixture(scope="session")
def table2_solution():
    return solve_flow(table2_scenario())


@pytest.fixture(scope="session")
def sensors():
    return SensorArray(30)


ACCEPTANCE_LINES = []


def record(criterion: str, passed: bool, detail: str) -> bool:
    """Log one acceptance line; it is printed again in the terminal summary."""
    line = f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
