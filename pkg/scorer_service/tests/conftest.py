from pathlib import Path

import numpy as np
import pytest


@pytest.fixture(scope="session")
def golden_dir():
    """The engine repository keeps the protocol's golden frame files; both
    implementations must reproduce them byte for byte."""
    return Path(__file__).resolve().parent.parent.parent / "tests" / "golden"


@pytest.fixture
def rng():
    return np.random.default_rng(7)
