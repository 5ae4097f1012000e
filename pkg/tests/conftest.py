import pytest
from hypothesis import HealthCheck, settings

from kingmix.measure import kingman, mixed

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

MEASURES = {
    "kingman": kingman(),
    "atom06": mixed(0.5, atoms=[(0.6, 0.5)]),
    "beta11": mixed(0.5, betas=[(1.0, 1.0, 0.5)]),
    "beta_critical": mixed(0.5, betas=[(0.5, 1.5, 0.5)]),
}


@pytest.fixture(params=list(MEASURES), ids=list(MEASURES))
def measure(request):
    return MEASURES[request.param]


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
