import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from amphiplan.costtable import cached_tables

# jitted kernels compile on first call, so per-example deadlines are meaningless
settings.register_profile("default", deadline=None)
settings.load_profile("default")

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = Path(__file__).resolve().parent / "fixtures"
TABLE_CACHE = Path(os.environ.get("AMPHIPLAN_TABLE_CACHE", ROOT / ".cache" / "tables"))


@pytest.fixture(scope="session")
def tables():
    """Default air and water tables, built once and kept between sessions."""
    return cached_tables(TABLE_CACHE)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def unit_quaternions(rng, n):
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


ACCEPTANCE = {}


def record_criterion(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
