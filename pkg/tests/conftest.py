import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dsekp.crypto import DeviceIdentity  # noqa: E402


@pytest.fixture
def identity() -> DeviceIdentity:
    return DeviceIdentity("esp32-01", bytes(range(32)), bytes(range(100, 132)))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)



def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
