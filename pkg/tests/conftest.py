import os

import pytest
import torch

torch.set_num_threads(int(os.environ.get("DUOASR_THREADS", "1")))

ACCEPTANCE_RESULTS: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def record_criterion():
    """Record a named acceptance criterion's outcome for the end-of-run summary."""

    def _record(name: str, ok: bool, detail: str = ""):
        ACCEPTANCE_RESULTS[name] = (bool(ok), detail)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
