import numpy as np
import pytest

from eventformer.numeric import get_default_dtype, set_default_dtype

from acceptance_log import ACCEPTANCE_LINES


@pytest.fixture(autouse=True)
def float64():
    """Tests run in 64-bit unless they switch explicitly; the global is restored afterwards."""
    prev = get_default_dtype()
    set_default_dtype(np.float64)
    yield
    set_default_dtype(prev)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
