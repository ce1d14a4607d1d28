from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cachebandit.catalog import (
    DEFAULT_SIZE_CLASSES,
    Catalog,
    DemandStream,
    DemandVector,
    build_zipf_profile,
    catalog_from_config,
    default_catalog,
    round_robin_sizes,
    sample_demand,
    sample_demand_block,
    sizes_from_classes,
    uniform_users_profile,
)

# request probability of the most popular of 400 files at rho=0.56, summed in 50-digit decimal
P1_F400_RHO056 = 0.033313571322986062


def test_catalog_invariants():
    cat = Catalog((3, 1, 2), capacity=2, max_users=5)
    assert cat.total_size == 6
    assert cat.num_files == 3
    # a file larger than the cache is allowed
    assert max(cat.sizes) > cat.capacity
    for bad in [dict(sizes=(), capacity=1, max_users=1), dict(sizes=(0,), capacity=1, max_users=1), dict(sizes=(1,), capacity=0, max_users=1)]:
        with pytest.raises(ValueError):
            Catalog(**bad)
    with pytest.raises(AttributeError):
        cat.total_size = 7


def test_default_catalog_matches_size_classes():
    cat = default_catalog()
    assert cat.num_files == 400
    assert cat.total_size == 50 * (2**8 - 1) == 12750
    assert cat.capacity == 512 and cat.max_users == 50
    assert cat.relative_capacity == pytest.approx(512 / 12750)
    for size, count in DEFAULT_SIZE_CLASSES:
        assert cat.sizes.count(size) == count
    # each size class spans the whole popularity range
    assert cat.sizes[:8] == (1, 2, 4, 8, 16, 32, 64, 128)
    assert cat.sizes[-8:] == (1, 2, 4, 8, 16, 32, 64, 128)


def test_size_layouts():
    classes = [(1, 2), (4, 2)]
    assert sizes_from_classes(classes, "round-robin-asc") == (1, 4, 1, 4)
    assert sizes_from_classes(classes, "round-robin-desc") == (4, 1, 4, 1)
    assert sizes_from_classes(classes, "blocks") == (1, 1, 4, 4)
    assert sizes_from_classes([(1, 3), (2, 1)], "round-robin-asc") == (1, 2, 1, 1)
    assert round_robin_sizes(5, [2, 1]) == (1, 2, 1, 2, 1)
    with pytest.raises(ValueError):
        sizes_from_classes(classes, "shuffled")


def test_zipf_closed_forms():
    p = build_zipf_profile(2, 1.0, 10, 10)
    np.testing.assert_allclose(p.request_probs, [2 / 3, 1 / 3], rtol=1e-15)
    p = build_zipf_profile(5, 0.0, 3, 10)
    np.testing.assert_allclose(p.request_probs, np.full(5, 0.2), rtol=1e-15)
    np.testing.assert_allclose(p.theta, 0.3 * p.request_probs, rtol=1e-15)


def test_zipf_head_mass_against_decimal_series():
    getcontext().prec = 50
    rho = Decimal("0.56")
    norm = sum(Decimal(k) ** (-rho) for k in range(1, 401))
    oracle = float(1 / norm)
    assert oracle == pytest.approx(P1_F400_RHO056, rel=1e-15)
    p = build_zipf_profile(400, 0.56, 25, 50)
    assert p.request_probs[0] == pytest.approx(P1_F400_RHO056, rel=1e-13)
    assert abs(p.request_probs.sum() - 1) <= 1e-12


@pytest.mark.parametrize(
    "args",
    [(0, 0.5, 1, 2), (3, -0.1, 1, 2), (3, 0.5, -1, 2), (3, 0.5, 3, 2)],
)
def test_zipf_rejects_bad_arguments(args):
    with pytest.raises(ValueError):
        build_zipf_profile(*args)


@given(
    F=st.integers(1, 60),
    rho=st.floats(0, 3),
    U=st.integers(1, 80),
    frac=st.floats(0, 1),
)
def test_zipf_profile_identities(F, rho, U, frac):
    mean = frac * U
    p = build_zipf_profile(F, rho, mean, U)
    assert abs(p.request_probs.sum() - 1) <= 1e-12
    np.testing.assert_allclose(p.theta, (mean / U) * p.request_probs, rtol=1e-15, atol=0)
    assert np.all(np.diff(p.request_probs) <= 1e-15)
    assert np.all((p.theta >= 0) & (p.theta <= 1))


@given(F=st.integers(2, 200), r1=st.floats(0, 3), r2=st.floats(0, 3))
def test_zipf_head_mass_monotone_in_rho(F, r1, r2):
    lo, hi = sorted((r1, r2))
    assert build_zipf_profile(F, hi, 1, 2).request_probs[0] >= build_zipf_profile(F, lo, 1, 2).request_probs[0] - 1e-15


def test_sample_demand_without_users():
    cat = Catalog((1, 2, 3), capacity=3, max_users=0)
    prof = build_zipf_profile(3, 1.0, 0, 0)
    d = sample_demand(prof, cat, np.random.default_rng(0))
    assert d.num_users == 0
    assert np.all(d.d == 0)


def test_sample_demand_point_mass():
    cat = Catalog((1, 1, 1), capacity=1, max_users=7)
    prof = build_zipf_profile(3, 1.0, 3.5, 7)
    prof = type(prof)(theta=np.array([0.5, 0, 0]), request_probs=np.array([1.0, 0, 0]), mean_users=3.5, max_users=7)
    rng = np.random.default_rng(1)
    for _ in range(50):
        d = sample_demand(prof, cat, rng)
        assert d.d[0] == d.num_users / 7
        assert np.all(d.d[1:] == 0)


@given(seed=st.integers(0, 2**32 - 1), U=st.integers(0, 60), F=st.integers(1, 30), rho=st.floats(0, 2))
def test_demand_counts_add_up_to_users(seed, U, F, rho):
    cat = Catalog((1,) * F, capacity=1, max_users=U)
    prof = build_zipf_profile(F, rho, U / 2, U)
    rng = np.random.default_rng(seed)
    d = sample_demand(prof, cat, rng)
    assert int(d.counts.sum()) == d.num_users
    assert 0 <= d.num_users <= U
    if U:
        assert np.all((d.d >= 0) & (d.d <= 1))
    counts, users = sample_demand_block(prof, cat, rng, 17)
    np.testing.assert_array_equal(counts.sum(axis=1), users)
    assert np.all((users >= 0) & (users <= U))


def test_demand_mean_converges_to_theta():
    cat = Catalog((1, 1, 1), capacity=1, max_users=50)
    prof = uniform_users_profile(cat, 0.0)
    np.testing.assert_allclose(prof.theta, 0.5 / 3)
    counts, _ = sample_demand_block(prof, cat, np.random.default_rng(2024), 100_000)
    d = counts / 50
    se = d.std(axis=0, ddof=1) / np.sqrt(len(d))
    assert np.all(np.abs(d.mean(axis=0) - prof.theta) <= 3 * se)


def test_single_period_sampler_mean():
    cat = Catalog((1, 1, 1), capacity=1, max_users=50)
    prof = uniform_users_profile(cat, 0.0)
    rng = np.random.default_rng(5)
    d = np.array([sample_demand(prof, cat, rng).d for _ in range(20_000)])
    se = d.std(axis=0, ddof=1) / np.sqrt(len(d))
    assert np.all(np.abs(d.mean(axis=0) - prof.theta) <= 3 * se)


def test_demand_stream_is_deterministic():
    cat = default_catalog()
    prof = uniform_users_profile(cat, 0.56)
    a = list(DemandStream(prof, cat, np.random.default_rng(3), block=100).blocks(250))
    b = list(DemandStream(prof, cat, np.random.default_rng(3), block=100).blocks(250))
    assert [len(c) for c, _ in a] == [100, 100, 50]
    for (ca, ua), (cb, ub) in zip(a, b):
        np.testing.assert_array_equal(ca, cb)
        np.testing.assert_array_equal(ua, ub)


def test_demand_vector_normalization():
    d = DemandVector(counts=np.array([2, 0, 3]), num_users=5, max_users=10)
    np.testing.assert_allclose(d.d, [0.2, 0, 0.3])
    assert 10 * d.d.sum() == pytest.approx(d.num_users)


def test_catalog_from_config():
    cat, prof = catalog_from_config({"size_classes": [[1, 2], [2, 2]], "capacity": 3, "max_users": 4, "zipf_rho": 1.0})
    assert cat.sizes == (1, 2, 1, 2)
    assert prof.mean_users == 2
    cat, _ = catalog_from_config({"sizes": [5, 1], "capacity": 2, "max_users": 1})
    assert cat.sizes == (5, 1)
    cat, _ = catalog_from_config({"num_files": 6, "size_classes": [[1, 1], [2, 1]], "capacity": 2})
    assert cat.sizes == (1, 2, 1, 2, 1, 2)
    with pytest.raises(ValueError):
        catalog_from_config({"num_files": 3, "sizes": [1, 1]})
