import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).resolve().parent))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def trot_demo(tmp_path_factory):
    """Short synthetic trot keypoint file with its camera scale."""
    from sds.synth import write_demo

    path = tmp_path_factory.mktemp("demo") / "trot.json"
    demo, scale = write_demo(path, "trot", seconds=4.0)
    return path, demo, scale


_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def verdicts():
    """Criterion number -> (passed, detail); printed as one line each at the end of the run."""
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")
