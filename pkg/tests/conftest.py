import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from dynreid import _kernels  # noqa: E402

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=["numba", "numpy"])
def kernel_path(request, monkeypatch):
    """Run the test once per kernel implementation."""
    if request.param == "numba":
        if not _kernels.HAVE_NUMBA:
            pytest.skip("numba unavailable or disabled")
        return "numba"
    for name in ("im2col", "col2im", "mutual_cross", "mutual_self", "rank_eval"):
        monkeypatch.setattr(_kernels, name, getattr(_kernels, name + "_np"))
    return "numpy"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
