import pytest
from hypothesis import settings

from mecmfg.aoi import Policy, SystemConfig

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def fig4():
    return SystemConfig(num_ues=10, es_rate=10.0, V=10.0, aoi_weights=(20.0, 5.0, 2.0))


@pytest.fixture
def fig4_policy():
    return Policy((0.6, 0.5, 0.6), 0.7)


_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record one summary line per acceptance criterion."""
    def record(number, ok, detail):
        _ACCEPTANCE.append(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
