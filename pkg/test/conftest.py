import numpy as np
import pytest

from stochascope.operators import (BlurSpec, ForwardOperator, build_space_varying_blur,
                                   identical_rows_operator, identity_operator)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def identity8():
    return identity_operator(8)


@pytest.fixture
def identical_rows12():
    return identical_rows_operator(np.array([1., -2., 0.5, 3.]), 12)


@pytest.fixture
def gaussian_12x8(rng):
    return ForwardOperator(rng.standard_normal((12, 8)), 'gaussian12x8')


@pytest.fixture(scope='session')
def blur32():
    return build_space_varying_blur(BlurSpec(32, 32, r_min=1., r_max=3.))


@pytest.fixture(scope='session')
def blur16():
    return build_space_varying_blur(BlurSpec(16, 16, r_min=1., r_max=3.))
