from pathlib import Path

import pytest

REPO = Path(__file__).resolve().parents[1]
SCENARIO_DIR = REPO / "scenarios"
GOLDEN_DIR = Path(__file__).resolve().parent / "golden"


@pytest.fixture
def scenario_dir() -> Path:
    return SCENARIO_DIR


@pytest.fixture
def golden_dir() -> Path:
    return GOLDEN_DIR
