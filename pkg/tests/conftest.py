import os

# Pin the kernel backend before any chansr import. The numpy path rides BLAS
# and is the faster choice on the single-core CI boxes this suite targets;
# test_kernels exercises the numba backend explicitly regardless.
os.environ.setdefault("CHANSR_BACKEND", "numpy")

import numpy as np
import pytest

from chansr import autodiff as ad
from chansr import kernels


@pytest.fixture(autouse=True, scope="session")
def _warm_kernels():
    if kernels.backend_name() == "numba":
        kernels.warmup()
    yield


@pytest.fixture(autouse=True)
def _f32_default():
    # tests that want f64 switch locally and this restores the default
    ad.set_default_dtype("f32")
    yield
    ad.set_default_dtype("f32")


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
