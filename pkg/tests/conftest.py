from __future__ import annotations

from pathlib import Path

import pytest

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def sample_dataset_text() -> str:
    return (DATA_DIR / "sample_dataset.txt").read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def phoenix_record_text(sample_dataset_text) -> str:
    return sample_dataset_text.split("\n\n")[0]


@pytest.fixture(scope="session")
def zebra_record_text(sample_dataset_text) -> str:
    return sample_dataset_text.split("\n\n")[1]


@pytest.fixture
def lily():
    from support import lily_story

    return lily_story()
