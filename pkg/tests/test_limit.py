import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from kingmix.errors import BadGrid, DomainError
from kingmix.limit import (
    euler_sde_path,
    limit_covariance,
    limit_covariance_matrix,
    sample_limit_path,
)


def rng(i=0):
    return np.random.default_rng(1000 + i)


def test_unit_marginal_variance():
    z = sample_limit_path([1.0], 1.0, rng(), size=1_000_000).values[:, 0]
    assert z.var() == pytest.approx(1 / 6, rel=0.01)


def test_two_point_covariance():
    z = sample_limit_path([0.5, 1.0], 1.0, rng(1), size=400_000).values
    cov = np.cov(z.T)[0, 1]
    assert cov == pytest.approx(1 / 24, abs=4 * math.sqrt(1 / 12 * 1 / 6 / 400_000))


def test_scaling_in_c():
    a = sample_limit_path([0.3, 1.0], 1.0, rng(2), size=10).values
    b = sample_limit_path([0.3, 1.0], 0.25, rng(2), size=10).values
    assert np.allclose(b, 0.5 * a, rtol=1e-15)


def test_single_path_shape_and_origin():
    lp = sample_limit_path([0.5, 1.0], 1.0, rng(3))
    assert lp.values.shape == (2,)
    grid, vals = lp.with_origin()
    assert grid[0] == 0.0 and vals[0] == 0.0


@pytest.mark.parametrize("grid", [[], [0.0, 1.0], [-1.0], [0.5, 0.5], [1.0, 0.5], [[1.0]], [np.nan]])
def test_bad_grids(grid):
    with pytest.raises(BadGrid):
        sample_limit_path(grid, 1.0, rng())


def test_covariance_values():
    assert limit_covariance(1, 1, 1) == pytest.approx(1 / 6)
    assert limit_covariance(0.5, 1, 1) == pytest.approx(1 / 24)
    assert limit_covariance(0.5, 1, 0.25) == pytest.approx(limit_covariance(0.5, 1, 1) / 4)
    with pytest.raises(DomainError):
        limit_covariance(0.0, 1.0)


def test_marginals_gaussian():
    grid = [0.25, 0.5, 1.0]
    z = sample_limit_path(grid, 0.5, rng(4), size=100_000).values
    for j, t in enumerate(grid):
        sd = math.sqrt(0.5 * t / 6)
        assert stats.kstest(z[:, j], "norm", args=(0, sd)).pvalue > 0.01 / len(grid)


def test_covariance_matrix_structure():
    grid = np.array([0.25, 0.5, 0.75, 1.0])
    n = 100_000
    z = sample_limit_path(grid, 1.0, rng(5), size=n).values
    emp = np.cov(z.T)
    target = limit_covariance_matrix(grid)
    # SE of a sample covariance of Gaussians: sqrt((s_ii s_jj + s_ij^2) / n)
    se = np.sqrt((np.outer(np.diag(target), np.diag(target)) + target**2) / n)
    assert np.all(np.abs(emp - target) <= 3 * se)


def test_euler_matches_exact_coarse():
    grid = [1e-3, 0.5, 1.0]
    e = euler_sde_path(grid, 1.0, rng(6), size=40_000, dt=1e-3).values
    assert e[:, 2].var() == pytest.approx(1 / 6, rel=0.04)
    assert e[:, 1].var() == pytest.approx(0.5 / 6, rel=0.04)


def test_euler_without_drift():
    t1 = 1e-3
    e = euler_sde_path([t1, 1.0], 1.0, rng(7), size=40_000, dt=1e-3, drift=False).values
    assert e[:, 1].var() == pytest.approx(t1 / 6 + (1 - t1) / 2, rel=0.04)


def test_euler_zero_scale_and_grid_floor():
    e = euler_sde_path([0.1, 0.2], 0.0, rng(8), size=5, dt=1e-2)
    assert np.all(e.values == 0)
    with pytest.raises(BadGrid):
        euler_sde_path([1e-7, 1.0], 1.0, rng())


@given(s=st.floats(1e-3, 10.0), t=st.floats(1e-3, 10.0), c=st.floats(0.0, 1.0))
def test_covariance_properties(s, t, c):
    k = limit_covariance(s, t)
    assert k == limit_covariance(t, s)
    assert 0 <= k <= math.sqrt(limit_covariance(s, s) * limit_covariance(t, t)) * (1 + 1e-12)
    assert limit_covariance(s, t, c) == pytest.approx(c * k, rel=1e-15)


@given(times=st.lists(st.floats(0.01, 5.0), min_size=1, max_size=6, unique=True))
def test_covariance_matrix_is_psd(times):
    grid = np.sort(times)
    if np.any(np.diff(grid) <= 1e-9):
        return
    eig = np.linalg.eigvalsh(limit_covariance_matrix(grid))
    assert eig.min() >= -1e-12 * eig.max()
