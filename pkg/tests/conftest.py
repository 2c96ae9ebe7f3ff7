import time

import pytest

from octvq.config import CodecConfig
from octvq.gic import train_model
from octvq.synthetic import training_corpus

ACCEPTANCE = {}


@pytest.fixture(scope="session")
def trained():
    """The default-config model trained on the bundled corpus, with its wall time."""
    t0 = time.perf_counter()
    model = train_model(training_corpus(), CodecConfig())
    return model, time.perf_counter() - t0


@pytest.fixture(scope="session")
def default_model(trained):
    return trained[0]


@pytest.fixture
def record():
    """``record(number, title, ok, detail)``: log an acceptance line, then assert."""
    def _record(number, title, ok, detail=""):
        ACCEPTANCE[number] = (bool(ok), title, detail)
        assert ok, f"criterion {number} ({title}) failed: {detail}"
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number}. {title}: {detail}")
