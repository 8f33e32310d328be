import numpy as np

from nmk import generators


def test_temporal_series_shapes_and_growth():
    snaps = generators.temporal_series(500, 4, seed=1)
    assert len(snaps) == 5
    assert all(s.shape == (500,) for s in snaps)
    assert all(s.dtype == np.dtype("<f4") for s in snaps)
    for prev, cur in zip(snaps, snaps[1:]):
        assert (cur >= prev).all()  # strictly positive growth factors
    assert (snaps[0] > 0).all()


def test_temporal_series_reproducible():
    a = generators.temporal_series(100, 2, seed=9)
    b = generators.temporal_series(100, 2, seed=9)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_multimodal_pair_ratio_spread():
    base, curr = generators.multimodal_pair(4000, seed=2)
    ratios = (curr - base) / base
    assert ratios.min() < -0.1  # negative mode present
    assert ratios.max() > 1.0   # far positive mode present
    assert base.shape == curr.shape == (4000,)


def test_planted_outlier_fraction():
    base, curr = generators.planted_outlier_pair(10_000, seed=3,
                                                 outlier_fraction=0.02)
    ratios = (curr - base) / base
    outliers = np.abs(ratios) > 1.0
    assert outliers.sum() == 200
    assert (np.abs(ratios[~outliers]) <= 5e-4 + 1e-12).all()
