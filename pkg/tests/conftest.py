import numpy as np
import pytest


def pytest_runtest_logreport(report):
    """One visible pass/fail line per acceptance criterion."""
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    outcome = "PASS" if report.passed else "FAIL"
    print(f"\n[acceptance] {name}: {outcome}", flush=True)


def make_image(height: int, width: int, fill: int = 0, channels: int = 3) -> np.ndarray:
    return np.full((height, width, channels), fill, dtype=np.uint8)


def quadrant_image(size: int = 448, bright: int = 255) -> np.ndarray:
    """Black image with a bright top-left quadrant."""
    img = make_image(size, size, 0)
    img[: size // 2, : size // 2] = bright
    return img


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
