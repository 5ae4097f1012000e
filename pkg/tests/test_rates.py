import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import special

from kingmix.errors import DomainError
from kingmix.measure import kingman, mixed
from kingmix.rates import RateFunctional, psi_gap_kernel, psi_kernel, psi_star_kernel

from conftest import MEASURES
from oracles import lambda_bk_quad, psi1_mpmath, psi1_nested

BETA_CRITICAL = mixed(0.5, betas=[(0.5, 1.5, 0.5)])
ANALYTIC_A = 8.0 / (3.0 * math.sqrt(math.pi))


def test_kingman_closed_forms():
    rf = RateFunctional(kingman())
    assert rf.psi(3.0) == 3.0
    assert rf.psi(2.0) == 1.0
    assert rf.psi_star(4.0) == 8.0
    assert rf.psi1(10.0) == 0.0


def test_atom_at_one_hand_value():
    # Lambda = 0.5 delta_0 + 0.5 delta_1: Psi_1(q) = q - 1
    rf = RateFunctional(mixed(0.5, atoms=[(1.0, 0.5)]))
    assert rf.psi1(5.0) == pytest.approx(4.0, rel=1e-15)
    assert rf.psi(5.0) == pytest.approx(0.5 * 10 + 0.5 * 4, rel=1e-15)


@pytest.mark.parametrize("name", ["atom06", "beta11", "beta_critical"])
@pytest.mark.parametrize("q", [1.5, 2.0, 7.0, 1e3, 1e6])
def test_psi1_against_mpmath(name, q):
    measure = MEASURES[name]
    rf = RateFunctional(measure)
    assert rf.psi1(q) == pytest.approx(psi1_mpmath(measure, q), rel=1e-12)


@pytest.mark.parametrize("q", [2.0, 3.5, 20.0])
def test_psi1_against_nested_integral(q):
    m = mixed(0.3, atoms=[(0.4, 0.2)], betas=[(2.5, 0.7, 0.5)])
    assert RateFunctional(m).psi1(q) == pytest.approx(psi1_nested(m, q), rel=1e-9)


def test_psi_kernel_series_branch_is_continuous():
    q = 1e3
    y = np.array([0.99999e-7, 1.00001e-7])
    vals = psi_kernel(q, y)
    assert vals[0] == pytest.approx(vals[1], rel=1e-8)
    assert psi_star_kernel(q, 1e-7 * (1 - 1e-9)) == pytest.approx(psi_star_kernel(q, 1e-7), rel=1e-8)


def test_psi_near_one_keeps_relative_precision():
    rf = RateFunctional(BETA_CRITICAL)
    d = 1e-12
    val = rf.psi_many(np.array([1.0 + d]), qm1=np.array([d]))[0]
    # Psi(1 + d) ~ d * Psi'(1), and Psi'(1) = c/2 + (1-c) int (y + log(1-y))/y^2 ...
    ratio = val / d
    val2 = rf.psi_many(np.array([1.0 + 1e-9]), qm1=np.array([1e-9]))[0] / 1e-9
    assert ratio == pytest.approx(val2, rel=1e-6)


def test_domain_errors():
    rf = RateFunctional(kingman())
    with pytest.raises(DomainError):
        rf.psi(0.5)
    with pytest.raises(DomainError):
        rf.psi_star(-1.0)
    with pytest.raises(DomainError):
        rf.lambda_bk(3, 4)
    with pytest.raises(DomainError):
        rf.transition_row(1)
    with pytest.raises(DomainError):
        rf.psi1_over_q32(1.5)


def test_lambda_bk_against_direct(measure):
    rf = RateFunctional(measure)
    for b, k in [(2, 2), (5, 3), (10, 10), (40, 7)]:
        assert rf.lambda_bk(b, k) == pytest.approx(lambda_bk_quad(measure, b, k), rel=1e-12)


def test_kingman_row():
    row = RateFunctional(kingman()).transition_row(10)
    assert row.total == pytest.approx(45.0, rel=1e-14)
    assert row.rate(2) == pytest.approx(45.0, rel=1e-14) and row.rate(3) == 0.0


def test_atom_full_merge_row():
    row = RateFunctional(mixed(0.5, atoms=[(1.0, 0.5)])).transition_row(5)
    assert row.rate(5) == pytest.approx(0.5)
    assert row.total == pytest.approx(5.5)


def test_mean_decrement_identity_large_b(measure):
    rf = RateFunctional(measure)
    for b in (1000, 10_000):
        assert rf.transition_row(b).mean_decrement() == pytest.approx(rf.psi(b), rel=1e-8)


def test_component_totals_match_rows(measure):
    rf = RateFunctional(measure)
    totals = rf.component_totals(300)
    for b in (2, 3, 17, 300):
        assert totals[:, b].sum() == pytest.approx(rf.transition_row(b).total, rel=1e-11)
    assert np.all(totals[:, :2] == 0)


def test_row_cache_is_bounded():
    rf = RateFunctional(mixed(0.5, atoms=[(0.6, 0.5)]), cache_capacity=5)
    for b in range(2, 20):
        rf.transition_row(b)
    assert rf.cached_rows() == 5
    assert rf.transition_row(19) is rf.transition_row(19)


def test_estimate_A_critical_beta():
    est = RateFunctional(BETA_CRITICAL).estimate_A((1e3, 1e5, 1e7))
    assert est.value == pytest.approx(ANALYTIC_A, rel=5e-3)
    assert all(d > 0 for d in est.last_diffs)


def test_estimate_A_vanishes_for_finite_sqrt_moment():
    est = RateFunctional(mixed(0.5, betas=[(1.0, 1.0, 0.5)])).estimate_A((1e4, 1e6, 1e8))
    assert est.value < 0.01 and est.last_diffs[-1] < 0


measures = st.builds(
    lambda c, ys, shapes: mixed(
        c,
        atoms=[(y, (1 - c) / (len(ys) + len(shapes))) for y in ys],
        betas=[(a, b, (1 - c) / (len(ys) + len(shapes))) for a, b in shapes],
    ),
    st.floats(0.05, 0.95),
    st.lists(st.floats(0.01, 1.0), min_size=1, max_size=2),
    st.lists(st.tuples(st.floats(0.3, 4.0), st.floats(0.3, 4.0)), max_size=2),
)


@given(m=measures, b=st.integers(2, 200))
def test_mean_decrement_identity_property(m, b):
    rf = RateFunctional(m)
    row = rf.transition_row(b)
    assert row.mean_decrement() == pytest.approx(rf.psi(b), rel=1e-9)
    assert np.all(row.rates >= 0)


@given(m=measures, q=st.floats(1.0, 1e6))
def test_sandwich_property(m, q):
    rf = RateFunctional(m)
    gap = float(rf.psi_gap_many(np.array([q]))[0])
    assert 0.0 <= gap <= q / 2
    assert gap == pytest.approx(rf.psi_star(q) - rf.psi(q), abs=1e-12 * rf.psi_star(q))


def test_gap_kernel_against_mpmath():
    import mpmath as mp

    with mp.workdps(50):
        for q, y in [(3.0, 1e-9), (3.0, 1e-3), (1e4, 0.03), (7.5, 0.3), (2.0, 1.0)]:
            yy = mp.mpf(y)
            ref = float((mp.exp(-q * yy) - (1 - yy) ** q) / yy**2)
            assert psi_gap_kernel(q, y) == pytest.approx(ref, rel=1e-13)


def test_kingman_gap_is_exact():
    q = np.logspace(0, 6, 50)
    assert np.array_equal(RateFunctional(kingman()).psi_gap_many(q), q / 2)


@given(m=measures, q=st.floats(1.0, 1e8), factor=st.floats(1.001, 10.0))
def test_psi_increasing_and_convex(m, q, factor):
    rf = RateFunctional(m)
    a, b, c = rf.psi_many(np.array([q, q * factor, q * factor**2]))
    assert a <= b <= c
    assert (c - b) / (q * factor * (factor - 1)) >= (b - a) / (q * (factor - 1)) * (1 - 1e-9)


@given(q=st.floats(2.0, 1e9), y=st.floats(1e-12, 1.0))
def test_psi_kernel_bounds(q, y):
    # 0 <= (qy - 1 + (1-y)^q) / y^2 <= q(q-1)/2 for q >= 2, and the exp variant dominates
    k = psi_kernel(q, y)
    assert k >= -1e-12 * q * q
    assert k <= q * (q - 1) / 2 * (1 + 1e-9) + 1e-300
    assert psi_star_kernel(q, y) >= k - 1e-9 * max(k, 1.0)
