import json
from pathlib import Path

import numpy as np
import pytest

from vloscale.geometry import CameraIntrinsics

DATA = Path(__file__).parent / "data"

_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def frozen():
    return json.loads((DATA / "frozen_oracles.json").read_text())


@pytest.fixture
def K_unit():
    # unit focal length, principal point at the origin
    return CameraIntrinsics(1.0, 1.0, 0.0, 0.0, 1, 1)


@pytest.fixture
def K_small():
    return CameraIntrinsics(240.0, 240.0, 160.0, 120.0, 320, 240)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def acceptance(request):
    """Record one line per acceptance criterion for the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(number: int, passed: bool, detail: str):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines, key=lambda x: x[0]):
        terminalreporter.write_line(line)
