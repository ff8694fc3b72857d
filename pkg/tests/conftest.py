import numpy as np
import pytest

from mcmil.synth_data import procedural_glyphs


@pytest.fixture(scope="session")
def glyphs():
    return procedural_glyphs(0, variants_per_class=4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# One line per acceptance criterion, filled in by tests/test_acceptance.py.
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
