import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vrdie.synth import synthesize_documents  # noqa: E402

TINY_MODEL = {
    "reader": {"d_conv": 4, "d_enc": 8, "d_state": 8, "d_att": 8, "d_char": 4, "t_max": 16,
               "position_code": 4},
    "context": {"d_model": 8, "heads": 2, "d_kernel": 4},
    "d_lstm": 8,
    "d_prior": 8,
}


@pytest.fixture(scope="session")
def receipts():
    return synthesize_documents("III", 2, seed=11)


@pytest.fixture(scope="session")
def invoices():
    return synthesize_documents("I", 2, seed=11)


def pytest_terminal_summary(terminalreporter):
    results = sys.modules.get("test_acceptance")
    if results is not None and results.RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(results.RESULTS):
            terminalreporter.write_line(results.RESULTS[key])
