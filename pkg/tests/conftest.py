import numpy as np
import pytest

from ergolab import backends
from ergolab.models import DriftSpec, build_heisenberg, build_ou_identity


@pytest.fixture(params=backends.available_backends())
def kernel(request):
    return backends.get_kernel(request.param)


@pytest.fixture
def kernel_pair():
    if "compiled" not in backends.available_backends():
        pytest.skip("compiled backend not built")
    return backends.get_kernel("compiled"), backends.get_kernel("python")


@pytest.fixture
def heis_ou():
    return build_heisenberg(DriftSpec(kind="ou", gamma=1.0))


@pytest.fixture
def ou3():
    return build_ou_identity(1.0, 3)


@pytest.fixture
def rng_np():
    return np.random.default_rng(20250810)
