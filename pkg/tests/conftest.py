import os
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

from predict_detect.dataio import generate_synthetic  # noqa: E402
from predict_detect.detectors import DetectorConfig  # noqa: E402

REPO = Path(__file__).resolve().parent.parent


@pytest.fixture(scope="session")
def synthetic():
    return generate_synthetic(250, 10, rng_seed=0)


@pytest.fixture(scope="session")
def small_synthetic():
    return generate_synthetic(60, 10, rng_seed=1)


@pytest.fixture
def fast_cfg():
    """Small ensembles so stream-level tests finish in well under a second."""
    return DetectorConfig(chunk_size=50, n_members=7, epochs=5, n_folds=5)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    lines = getattr(acceptance, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
