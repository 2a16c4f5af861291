import pytest

from leverarm.sim import Flat, SimConfig, simulate

_REPORT = pytest.StashKey[list]()


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria (slow)")
    config.stash[_REPORT] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_REPORT, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def report(request):
    """Record one pass/fail line for the acceptance summary."""

    def _report(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        request.config.stash[_REPORT].append(line)
        print(line)

    return _report


@pytest.fixture(scope="session")
def hilly_one():
    """Noiseless hilly dataset, one antenna."""
    return simulate(SimConfig(steps=100, lever_arms=[(0.5, 0.3, 0.2)], seed=11))


@pytest.fixture(scope="session")
def hilly_three():
    arms = [(0.3, -0.4, 0.5), (-1.2, 0.1, 0.8), (0.7, 0.9, -0.3)]
    return simulate(SimConfig(steps=200, lever_arms=arms, seed=12))


@pytest.fixture(scope="session")
def flat_one():
    return simulate(SimConfig(steps=300, lever_arms=[(0.5, 0.3, 0.2)], surface=Flat(), seed=13))


@pytest.fixture(scope="session")
def noisy_three():
    arms = [(0.0, 0.6, 0.8), (0.6, 0.0, 0.8), (-0.48, 0.36, 0.8)]
    return simulate(SimConfig(steps=1000, lever_arms=arms, noise=0.1, seed=14))
