import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


def coffee(height: int, width: int) -> np.ndarray:
    """scikit-image's coffee photograph resampled to ``height x width`` uint8 RGB."""
    from skimage import data, transform

    img = transform.resize(data.coffee(), (height, width), anti_aliasing=True)
    return (img * 255).round().astype(np.uint8)


@pytest.fixture(scope="session")
def coffee_small():
    return coffee(150, 200)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
