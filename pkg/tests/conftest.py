import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from urbanscene.geometry import CameraIntrinsics
from urbanscene.scenario import ScenarioConfig, build_intersection

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def cam():
    return CameraIntrinsics.default(fast=False)


@pytest.fixture(scope="session")
def fast_cam():
    return CameraIntrinsics.default(fast=True)


@pytest.fixture(scope="session")
def intersection():
    return build_intersection(ScenarioConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS: dict[int, str] = {}


@pytest.fixture(scope="session")
def verdict():
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""
    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        _VERDICTS[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[number])
