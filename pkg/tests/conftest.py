import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from layerquant.tensor_io import synth_model  # noqa: E402

PLANTED = {(1, "o_proj"), (14, "o_proj")}


@pytest.fixture(scope="session")
def planted_bundle():
    return synth_model(16, rows=256, cols=256, planted=PLANTED, tail_scale=50.0, seed=0)


@pytest.fixture(scope="session")
def small_bundle():
    return synth_model(4, rows=32, cols=64, seed=3)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
