import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from slungload.params import default_params  # noqa: E402


@pytest.fixture
def params():
    return default_params()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
