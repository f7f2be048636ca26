import json
from pathlib import Path

import numpy as np
import pytest

FROZEN = Path(__file__).parent / "frozen" / "expected.json"


def j2c(a):
    """Inverse of the ``[re, im]`` encoding used in the frozen file."""
    a = np.asarray(a, dtype=float)
    return a[..., 0] + 1j * a[..., 1]


@pytest.fixture(scope="session")
def frozen():
    return json.loads(FROZEN.read_text())
