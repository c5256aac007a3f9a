from pathlib import Path

import pytest

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def golden_trace_text() -> str:
    return (DATA_DIR / "golden_trace.txt").read_text()


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA_DIR
