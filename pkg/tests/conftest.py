import numpy as np
import pytest

from vqjscc import autodiff as ad
from vqjscc.codec import CodecConfig, JSCCModel

SMALL = CodecConfig(C=3, H=8, W=8, c1=6, c2=8, D=(2, 3, 4, 5, 6), seed=3)


@pytest.fixture
def f64():
    with ad.precision("f64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_model():
    return JSCCModel(SMALL)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
