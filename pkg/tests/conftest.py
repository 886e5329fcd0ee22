import numpy as np
import pytest

from pnat.tensor import set_debug_checks, set_default_dtype


@pytest.fixture(autouse=True)
def float64_default():
    """Tests run in 64-bit mode unless they opt out themselves."""
    set_default_dtype(np.float64)
    yield
    set_default_dtype(np.float64)
    set_debug_checks(False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
