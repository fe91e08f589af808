import math

import pytest

from app.schemas.schemas import GainSet


@pytest.fixture
def stc_gains() -> GainSet:
    """Gains of the published undisturbed and disturbed runs."""
    return GainSet(alpha=math.sqrt(10.0), beta=10.0, h=0.01)
