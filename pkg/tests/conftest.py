import pytest

import ensembles
from turbulux.channel import reference_channel

_RESULTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_RESULTS] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_RESULTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """``criterion(label, ok, detail)`` records a PASS/FAIL line and asserts ``ok``."""
    lines = request.config.stash[_RESULTS]

    def check(label, ok, detail):
        line = f"{label} {'PASS' if ok else 'FAIL'}: {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return check


@pytest.fixture
def channel_2000():
    return reference_channel(2000.0)


@pytest.fixture(scope="session")
def simulated(request):
    """``simulated(L)``: the cached phase-screen ensemble for channel length ``L``."""
    cache_dir = request.config.cache.mkdir("turbulux-ensembles")
    loaded = {}

    def get(length):
        if length not in loaded:
            loaded[length] = ensembles.ensemble(float(length), cache_dir)
        return loaded[length]

    return get
