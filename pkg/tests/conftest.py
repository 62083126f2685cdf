import os
from pathlib import Path

import numpy as np
import pytest

from fedfnn.data import from_lists

ROOT = Path(__file__).resolve().parents[1]
ML100K = Path(os.environ.get("FEDFNN_ML100K", ROOT / "data" / "ml-100k" / "u.data"))


@pytest.fixture(scope="session")
def ml100k_path():
    if not ML100K.exists():
        pytest.fail(f"MovieLens-100K not found at {ML100K}; run scripts/fetch_ml100k.py")
    return ML100K


@pytest.fixture
def tiny_dataset():
    """12 users over 30 items, 3 to 8 interactions each."""
    rng = np.random.default_rng(5)
    lists = [rng.choice(30, size=rng.integers(3, 9), replace=False) for _ in range(12)]
    return from_lists(lists, 30)


# acceptance criteria report ---------------------------------------------------

ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def record():
    """``record(key, passed, detail)`` stores one line for the acceptance summary."""

    def _record(key: str, passed: bool, detail: str) -> None:
        ACCEPTANCE[key] = (bool(passed), detail)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.split()[0].rstrip("abc")), k)):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}")
