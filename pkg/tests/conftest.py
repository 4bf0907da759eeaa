import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from citruslab.network import Affine, Network, ReLU

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# criterion number -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE = {}


def random_net(rng, sizes, scale=1.0, bias=0.5):
    layers = []
    for k in range(len(sizes) - 1):
        W = rng.normal(size=(sizes[k + 1], sizes[k])) * scale / np.sqrt(sizes[k])
        layers.append(Affine(W, rng.normal(size=sizes[k + 1]) * bias))
        if k < len(sizes) - 2:
            layers.append(ReLU())
    return Network(layers)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def record_criterion():
    def record(number: int, passed: bool, detail: str = ""):
        ACCEPTANCE[number] = (bool(passed), detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
