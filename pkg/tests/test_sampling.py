import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from invrender import sampling


def test_uniform_range_and_determinism():
    u = sampling.uniform(3, np.arange(10000), 0, 5)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert np.array_equal(u, sampling.uniform(3, np.arange(10000), 0, 5))
    assert not np.array_equal(u, sampling.uniform(4, np.arange(10000), 0, 5))
    assert abs(u.mean() - 0.5) < 0.01


def test_dimensions_are_decorrelated():
    p = np.arange(20000)
    a = sampling.uniform(0, p, 0, 2)
    b = sampling.uniform(0, p, 0, 3)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.03


def test_bounce_dims_do_not_overlap():
    used = {sampling.DIM_PIXEL_X, sampling.DIM_PIXEL_Y}
    for k in range(6):
        dims = set(sampling.bounce_dims(k))
        assert not used & dims
        used |= dims


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 63), st.integers(2, 33), st.integers(0, 40))
def test_each_pixel_is_stratified(seed, spp, dim):
    s = sampling.PixelSampler(seed, np.arange(7), spp)
    u = s.get(dim).reshape(7, spp)
    strata = np.sort(np.floor(u * spp).astype(int), axis=1)
    assert np.array_equal(strata, np.tile(np.arange(spp), (7, 1)))


def test_samples_independent_of_pixel_subset():
    full = sampling.PixelSampler(9, np.arange(100), 4)
    part = sampling.PixelSampler(9, np.array([17, 63]), 4)
    f = full.get(6).reshape(100, 4)
    assert np.array_equal(part.get(6).reshape(2, 4), f[[17, 63]])
    view = full.subset(np.array([5, 400 - 1]))
    assert np.array_equal(view.get(6), full.get(6)[[5, 399]])
