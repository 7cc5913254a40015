import pytest

from xidlens import kernels


@pytest.fixture(params=kernels.available())
def backend(request):
    return request.param
