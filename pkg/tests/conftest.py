"""Shared fixtures: dataset paths and small reusable configs."""

from pathlib import Path

import numpy as np
import pytest

from fedscalar.data import Dataset, load_digits

REPO_ROOT = Path(__file__).resolve().parent.parent
DIGITS_CSV = REPO_ROOT / "data" / "digits_8x8.csv"


@pytest.fixture(scope="session")
def digits_path() -> str:
    assert DIGITS_CSV.exists(), "bundled dataset missing; run scripts/export_digits.py"
    return str(DIGITS_CSV)


@pytest.fixture(scope="session")
def digits(digits_path) -> Dataset:
    return load_digits(digits_path)


@pytest.fixture()
def toy_dataset() -> Dataset:
    """Tiny in-memory dataset: 12 samples, 4 features, 10 classes."""
    gen = np.random.default_rng(42)
    features = gen.uniform(0.0, 1.0, size=(12, 4))
    labels = np.arange(12, dtype=np.int64) % 10
    return Dataset(features=features, labels=labels)
