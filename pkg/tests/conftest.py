import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from evpo.advantages import RolloutGroup, Trajectory

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_traj(values, ret, start=0):
    """Trajectory with states start, start+1, ... and a terminal-only reward."""
    n = len(values)
    rewards = np.zeros(n)
    rewards[-1] = ret
    return Trajectory(np.arange(start, start + n), np.zeros(n, dtype=int), rewards,
                      np.asarray(values, dtype=float), float(ret))


def make_group(value_lists, returns, task_seed=0):
    return RolloutGroup(task_seed, tuple(make_traj(v, g) for v, g in zip(value_lists, returns)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria register one line each; printed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, title: str, passed: bool, detail: str = "") -> bool:
    status = "PASS" if passed else "FAIL"
    ACCEPTANCE_LINES[number] = f"[{status}] criterion {number:>2}: {title}" + (f" -- {detail}" if detail else "")
    print(ACCEPTANCE_LINES[number])
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
