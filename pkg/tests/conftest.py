import numpy as np
import pytest

from dpkm import harness

_ACCEPTANCE: list[tuple[str, str, str]] = []


@pytest.fixture(scope="session")
def iris():
    return harness.normalize_unit_box(harness.load_csv("iris"))


@pytest.fixture(scope="session")
def blobs():
    s = harness.BLOB_SET
    return harness.synthetic_blobs(s.k_true, s.per_cluster, s.d, s.spread, s.seed)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def acceptance_log():
    """Record one line per acceptance check; printed in the terminal summary."""

    def log(criterion: str, passed: bool | None, detail: str) -> None:
        status = "INFO" if passed is None else ("PASS" if passed else "FAIL")
        line = (criterion, status, detail)
        _ACCEPTANCE.append(line)
        print(f"[{status}] {criterion}: {detail}")

    return log


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, status, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"[{status}] {criterion}: {detail}")
