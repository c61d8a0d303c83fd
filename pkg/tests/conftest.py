import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# criterion number -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def zoo(request):
    from zoo import ModelZoo
    return ModelZoo(request.config.cache.mkdir("siamtir-models"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
