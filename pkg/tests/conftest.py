from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bezier_mpc.robot import default_model

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


@pytest.fixture(scope="session")
def model():
    return default_model()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def central_difference(fn, x, h=1e-6):
    """Column-wise central finite-difference Jacobian of a vector function."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fn(x), dtype=float).ravel()
    J = np.zeros((f0.size, x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        J[:, i] = (np.asarray(fn(x + e)).ravel() - np.asarray(fn(x - e)).ravel()) / (2 * h)
    return J


# acceptance results, criterion number -> list of (passed, detail)
ACCEPTANCE: dict = {}


def record(criterion: int, passed: bool, detail: str) -> bool:
    ACCEPTANCE.setdefault(criterion, []).append((bool(passed), detail))
    print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}")
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[n]
        ok = all(p for p, _ in parts)
        detail = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
