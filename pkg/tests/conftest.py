import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

MNIST_DIR = Path(os.environ.get("BITNN_MNIST_DIR", "/root/data/mnist"))


def _has_mnist() -> bool:
    from bitnn.dataio import find_split_files

    try:
        find_split_files(MNIST_DIR, "train")
        find_split_files(MNIST_DIR, "test")
    except (FileNotFoundError, OSError):
        return False
    return True


@pytest.fixture(scope="session")
def mnist_dir() -> Path:
    if not _has_mnist():
        pytest.skip(f"MNIST IDX files not found in {MNIST_DIR} (set BITNN_MNIST_DIR)")
    return MNIST_DIR


_CRITERIA: list[tuple[int, str, str, str]] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, name = marker.args
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    if report.when == "call" or (report.when == "setup" and not report.passed):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        _CRITERIA.append((number, name, status, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, status, detail in sorted(_CRITERIA):
        suffix = f" ({detail})" if detail else ""
        terminalreporter.write_line(f"criterion {number} {name}: {status}{suffix}")
