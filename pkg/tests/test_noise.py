import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shelab.noise import (
    NoiseIncrement,
    SheetGrid,
    coarsen,
    coupled_streams,
    sample_increments,
    standard_normals,
)


def test_standard_normals_deterministic():
    a = standard_normals(123, 5, 7, 4, 64)
    b = standard_normals(123, 5, 7, 4, 64)
    assert np.array_equal(a, b)
    assert a.shape == (4, 64)


def test_standard_normals_replica_blocks_align():
    # one call for replicas 0..5 slices identically to per-replica calls
    block = standard_normals(9, 3, 0, 6, 32)
    for r in range(6):
        single = standard_normals(9, 3, r, 1, 32)
        assert np.array_equal(block[r], single[0])


def test_standard_normals_depend_on_all_keys():
    base = standard_normals(1, 0, 0, 1, 64)
    assert not np.array_equal(base, standard_normals(2, 0, 0, 1, 64))
    assert not np.array_equal(base, standard_normals(1, 1, 0, 1, 64))
    assert not np.array_equal(base, standard_normals(1, 0, 1, 1, 64))


def test_standard_normals_moments():
    z = standard_normals(42, 0, 0, 500, 512)
    n = z.size
    assert abs(z.mean()) < 4.0 / math.sqrt(n)
    assert abs(z.std() - 1.0) < 0.01
    # kurtosis of a standard normal is 3
    assert abs((z**4).mean() - 3.0) < 0.1


def test_standard_normals_site_count_alignment():
    with pytest.raises(ValueError):
        standard_normals(0, 0, 0, 1, 30)  # not a multiple of 4


def test_sheet_grid_validation():
    with pytest.raises(ValueError):
        SheetGrid(eps=-0.1, dt=0.01, N=64, seed=0, replica=0)
    with pytest.raises(ValueError):
        SheetGrid(eps=0.1, dt=0.0, N=64, seed=0, replica=0)
    with pytest.raises(ValueError):
        SheetGrid(eps=0.1, dt=0.01, N=64, seed=-1, replica=0)


def test_sample_increments_scale():
    grid = SheetGrid(eps=0.1, dt=0.04, N=64, seed=11, replica=2)
    inc = sample_increments(grid, 9)
    z = standard_normals(11, 9, 2, 1, 64)[0]
    assert np.array_equal(inc.values, z * math.sqrt(0.04))


def test_noise_increment_rejects_nonfinite():
    with pytest.raises(ValueError):
        NoiseIncrement(values=np.array([0.0, np.nan]))


def test_coarsen_variance_preserving():
    vals = standard_normals(3, 0, 0, 1, 128)[0]
    merged = coarsen(NoiseIncrement(values=vals)).values
    assert merged.shape == (64,)
    want = (vals[0::2] + vals[1::2]) / math.sqrt(2.0)
    assert np.array_equal(merged, want)
    # variance of each merged cell is the cell average, not the sum
    big = standard_normals(3, 0, 0, 2000, 128).reshape(-1)
    m = (big[0::2] + big[1::2]) / math.sqrt(2.0)
    assert abs(m.var() - 1.0) < 0.02


def test_coarsen_rejects_odd_length():
    with pytest.raises(ValueError):
        coarsen(NoiseIncrement(values=np.zeros(7)))


def test_coupled_streams_sum_rule():
    fine = SheetGrid(eps=0.05, dt=0.001, N=64, seed=21, replica=1)
    coarse = SheetGrid(eps=0.1, dt=0.004, N=32, seed=21, replica=1)
    stream = coupled_streams(fine, coarse)
    for step in range(3):
        fine_incs, coarse_inc = next(stream)
        assert len(fine_incs) == 4
        acc = np.zeros(32)
        for inc in fine_incs:
            acc = acc + (inc.values[0::2] + inc.values[1::2]) / math.sqrt(2.0)
        assert np.array_equal(acc, coarse_inc.values)


def test_coupled_streams_validation():
    fine = SheetGrid(eps=0.05, dt=0.001, N=64, seed=21, replica=1)
    with pytest.raises(ValueError):
        next(coupled_streams(fine, SheetGrid(eps=0.1, dt=0.004, N=30, seed=21, replica=1)))
    with pytest.raises(ValueError):
        next(coupled_streams(fine, SheetGrid(eps=0.1, dt=0.0035, N=32, seed=21, replica=1)))
    with pytest.raises(ValueError):
        next(coupled_streams(fine, SheetGrid(eps=0.1, dt=0.004, N=32, seed=22, replica=1)))


@given(
    seed=st.integers(min_value=0, max_value=2**64 - 1),
    step=st.integers(min_value=0, max_value=10_000),
    replica=st.integers(min_value=0, max_value=10_000),
)
@settings(max_examples=25, deadline=None)
def test_standard_normals_pure_function(seed, step, replica):
    a = standard_normals(seed, step, replica, 2, 16)
    b = standard_normals(seed, step, replica, 2, 16)
    assert np.array_equal(a, b)
    assert np.all(np.isfinite(a))
