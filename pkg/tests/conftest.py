import time

import pytest

from cvqkd_atlas import ProtocolConfig, ProtocolSpec, SweepGrid, sweep

DEFAULT_PROTOCOLS = ("apsk16", "apsk64", "apsk256", "psk16", "qam16")

# criterion -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE_RESULTS: dict[str, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def default_grid():
    return SweepGrid.default()


@pytest.fixture(scope="session")
def default_meshes(default_grid):
    """Default-grid meshes for the five protocols compared in the reference study."""
    meshes, timings = {}, {}
    for name in DEFAULT_PROTOCOLS:
        t0 = time.perf_counter()
        meshes[name] = sweep(default_grid, ProtocolSpec.parse(name), ProtocolConfig())
        timings[name] = time.perf_counter() - t0
    meshes["_timings"] = timings
    return meshes


@pytest.fixture
def record_acceptance():
    def _record(name: str, passed: bool, detail: str) -> None:
        ACCEPTANCE_RESULTS[name] = (bool(passed), detail)
        print(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[name]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
