import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ticketcodec.imageio import read_image

DATA = Path(__file__).parent / "data"
NATURAL_CROPS = ("astronaut", "chelsea", "coffee", "rocket", "ihc")

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def crop(name: str) -> np.ndarray:
    return read_image(DATA / f"{name}_64.png")


def small_crop(name: str, size: int) -> np.ndarray:
    return crop(name)[:, :size, :size]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_collection_modifyitems(config, items):
    if os.environ.get("TICKETCODEC_EXTENDED") == "1":
        return
    skip = pytest.mark.skip(reason="extended criterion; set TICKETCODEC_EXTENDED=1")
    for item in items:
        if "extended" in item.keywords:
            item.add_marker(skip)


_CRITERIA: list[str] = []


@pytest.fixture
def criterion(request):
    """``criterion(n, ok, detail)`` prints one PASS/FAIL line and asserts ``ok``."""
    reporter = request.config.pluginmanager.getplugin("terminalreporter")

    def report(n, ok, detail):
        line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} ({detail})"
        _CRITERIA.append(line)
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
