import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cachebandit.backend import available_backends
from cachebandit.catalog import Catalog, DemandVector, build_zipf_profile, default_catalog, uniform_users_profile
from cachebandit.policies import (
    ArmStats,
    ConfigurationError,
    EpsilonGreedy,
    PolicySpec,
    SwitchingSchedule,
    advance_schedule,
    choose_cache,
    initialize,
    max_gamma,
    min_gamma,
    observe,
    perturb_cucb,
    perturb_mcucb,
)
from cachebandit.simulator import run_episode, step
from cachebandit.spo import solve_greedy

# 0.2 + 400**-0.56 * sqrt(0.5), evaluated in 50-digit decimal arithmetic
MCUCB_EXAMPLE = 0.22467921872462801


def test_perturb_cucb_examples():
    assert perturb_cucb(0.3, 4, 1) == 0.3
    assert perturb_cucb(0.2, 6, math.e**2) == pytest.approx(0.2 + math.sqrt(0.5), rel=1e-15)
    assert perturb_cucb(0.2, 6, math.e**2) == pytest.approx(0.9071, abs=5e-5)
    vals = [perturb_cucb(0.1, T, 50) for T in range(1, 101)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        perturb_cucb(0.1, 0, 5)
    with pytest.raises(ValueError):
        perturb_cucb(0.1, 1, 0)


@given(st.floats(0, 1), st.integers(1, 10_000), st.integers(2, 10**6))
def test_perturb_cucb_monotone(th, T, t):
    assert perturb_cucb(th, T, t + 1) > perturb_cucb(th, T, t)
    assert perturb_cucb(th, T + 1, t) < perturb_cucb(th, T, t)


def test_perturb_mcucb_examples():
    for th, T, t in [(0.2, 3, 7), (0.0, 1, 2), (0.9, 50, 1000)]:
        assert perturb_mcucb(th, T, t, 400, 0.0, 1.0) == pytest.approx(perturb_cucb(th, T, t), rel=1e-15)
    val = perturb_mcucb(0.2, 6, math.e**2, 400, 0.56, 1.0)
    assert val == pytest.approx(MCUCB_EXAMPLE, rel=1e-14)
    with pytest.raises(ValueError):
        perturb_mcucb(0.2, 6, 10, 400, 0.56, 0.0)
    with pytest.raises(ValueError):
        perturb_mcucb(0.2, 0, 10, 400, 0.56, 1.0)


def test_perturb_mcucb_shrinks_with_more_users():
    ts = np.arange(3, 1001)
    prev = None
    for U in range(1, 101):
        cur = perturb_mcucb(np.zeros(len(ts)), np.full(len(ts), 5), ts, 400, 0.56, float(U))
        if prev is not None:
            assert np.all(cur < prev)
        prev = cur


def test_schedule_examples():
    s = SwitchingSchedule.start("sqrt", 400, gamma=2.0)
    assert (s.n, s.b, s.step) == (401, 1, 41)
    s = advance_schedule(s)
    assert (s.n, s.b) == (442, 2)
    s = SwitchingSchedule.start("constant", 400, L=10)
    for b in range(1, 50):
        assert s.n == 401 + 10 * (b - 1) and s.b == b
        s = advance_schedule(s)
    s = SwitchingSchedule.start("every", 7)
    assert advance_schedule(s).n == 9


def schedule_properties_hold(F, gamma, n_stop):
    s = SwitchingSchedule.start("sqrt", F, gamma=gamma)
    prev = None
    while s.n < n_stop:
        d = s.step
        if s.b * s.b > s.n:
            return False
        if prev is not None and d * prev[0] > prev[1] * s.n:
            return False
        prev = (s.n, d)
        s = advance_schedule(s)
    return True


def test_schedule_properties_at_spec_gamma():
    assert schedule_properties_hold(400, 2.05, 10**8)


@given(st.sampled_from([2, 10, 400]), st.floats(0, 1))
def test_schedule_properties_over_gamma_range(F, u):
    lo, hi = min_gamma(F), min(10.0, max_gamma(F))
    assert schedule_properties_hold(F, lo + u * (hi - lo), 10**6)


def test_initialization_caches_one_file_per_period():
    cat = Catalog((1, 2, 3), capacity=3, max_users=4)
    prof = uniform_users_profile(cat, 0.5)
    pol = initialize(PolicySpec("cucbsc-L", L=2), cat, prof)
    rng = np.random.default_rng(0)
    for t in range(1, 4):
        demand = DemandVector(np.array([1, 1, 1]), 3, 4)
        rec, pol = step(pol, cat, prof, t, rng, demand)
        assert rec.cache.files == (t - 1,)
    np.testing.assert_array_equal(pol.stats.plays, [1, 1, 1])


def test_bandit_rejects_unsampleable_files():
    cat = Catalog((1, 5), capacity=3, max_users=2)
    prof = uniform_users_profile(cat, 0.5)
    with pytest.raises(ConfigurationError):
        initialize(PolicySpec("cucb"), cat, prof)
    initialize(PolicySpec("iub"), cat, prof)
    initialize(PolicySpec("delta-myopic"), cat, prof)


def test_first_solve_at_f_plus_one():
    cat = default_catalog()
    prof = uniform_users_profile(cat, 0.56)
    tr = run_episode(cat, prof, PolicySpec("cucbsc-sqrt"), 450, seed=1)
    assert tr.cache_at(400) == (399,)
    assert len(tr.cache_at(401)) > 1
    # next switching period is 401 + ceil(2 sqrt 401) = 442
    assert list(tr.change_t[399:]) == [400, 401, 442]


@pytest.mark.parametrize("kind", ["cucb", "cucbsc-L", "cucbsc-sqrt", "mcucbsc-L", "mcucbsc-sqrt"])
def test_bandits_switch_only_at_switching_periods(kind):
    cat = Catalog((1, 2, 1, 3, 2, 1), capacity=4, max_users=6)
    prof = uniform_users_profile(cat, 0.9)
    spec = PolicySpec(kind, L=7, gamma=2.5)
    tr = run_episode(cat, prof, spec, 3000, seed=2)
    pol = initialize(spec, cat, prof)
    allowed = set(range(1, 7))
    sched = pol.schedule
    while sched.n <= 3000:
        allowed.add(sched.n)
        sched = advance_schedule(sched)
    assert set(tr.change_t.tolist()) <= allowed


def test_observe_updates_only_cached_files():
    cat = Catalog((1, 1), capacity=1, max_users=10)
    prof = uniform_users_profile(cat, 0.5)
    pol = initialize(PolicySpec("iub"), cat, prof)
    observe(pol, DemandVector(np.array([3, 4]), 7, 10))
    np.testing.assert_array_equal(pol.stats.plays, [0, 0])
    pol.choose_cache(1, np.random.default_rng(0))
    observe(pol, DemandVector(np.array([3, 4]), 7, 10))
    observe(pol, DemandVector(np.array([5, 1]), 6, 10))
    assert pol.stats.theta_hat[0] == pytest.approx(0.4)
    np.testing.assert_array_equal(pol.stats.plays, [2, 0])
    assert pol.stats.theta_hat[1] == 0


def test_running_mean_update():
    stats = ArmStats.zeros(3)
    stats.update(np.array([1]), np.array([0.3]))
    stats.update(np.array([1]), np.array([0.5]))
    assert stats.theta_hat[1] == pytest.approx(0.4)
    assert stats.plays[1] == 2


@given(st.lists(st.floats(0, 1), min_size=1, max_size=50))
def test_sample_means_stay_in_unit_interval(samples):
    stats = ArmStats.zeros(1)
    for s in samples:
        stats.update(np.array([0]), np.array([s]))
        assert 0 <= stats.theta_hat[0] <= 1


def test_sample_mean_consistent_with_theta():
    cat = Catalog((1, 1, 1), capacity=1, max_users=50)
    prof = uniform_users_profile(cat, 0.56)
    pol = initialize(PolicySpec("iub"), cat, prof)
    tr = run_episode(cat, prof, pol, 10_000, seed=11, keep_demand=True)
    d = tr.demand[:, 0] / 50
    se = d.std(ddof=1) / math.sqrt(len(d))
    assert pol.stats.plays[0] == 10_000
    assert abs(pol.stats.theta_hat[0] - prof.theta[0]) <= 3 * se


def test_iub_is_static():
    cat = default_catalog()
    prof = uniform_users_profile(cat, 0.56)
    tr = run_episode(cat, prof, PolicySpec("iub"), 500, seed=0)
    assert list(tr.change_t) == [1]
    assert tr.cost[0] == tr.used[0] and np.all(tr.cost[1:] == 0)
    assert tr.cache_at(1) == solve_greedy(prof.theta, cat).files


def test_zero_epsilon_always_exploits():
    cat = Catalog((1, 2, 1, 3, 2, 1, 1), capacity=5, max_users=8)
    prof = uniform_users_profile(cat, 0.7)
    spec = PolicySpec("eps-greedy", epsilon=0.0)
    rng = np.random.default_rng(9)
    demand_rng = np.random.default_rng(10)
    pol = initialize(spec, cat, prof)
    ref_stats = ArmStats.zeros(cat.num_files)
    ref_cache = None
    for t in range(1, 400):
        d = DemandVector(demand_rng.multinomial(4, prof.request_probs), 4, 8)
        rec, pol = step(pol, cat, prof, t, rng, d)
        if t == 1:
            ref_cache = rec.cache
        else:
            ref_cache = solve_greedy(ref_stats.theta_hat, cat)
            assert rec.cache == ref_cache
        files = np.array(ref_cache.files)
        ref_stats.update(files, d.counts[files] / 8)


def test_refresh_greedy_decides_every_delta_periods():
    cat = Catalog((1,) * 12, capacity=4, max_users=6)
    prof = uniform_users_profile(cat, 0.3)
    tr = run_episode(cat, prof, PolicySpec("delta-eps-greedy", delta_refresh=10, epsilon=0.5), 500, seed=4)
    assert set(((tr.change_t - 1) % 10).tolist()) <= {0}


def test_myopic_keeps_a_file_hit_every_period():
    cat = Catalog((1,) * 6, capacity=3, max_users=5)
    prof = build_zipf_profile(6, 1.0, 2.5, 5)
    pol = initialize(PolicySpec("delta-myopic", delta_refresh=10), cat, prof)
    rng = np.random.default_rng(12)
    hits = DemandVector(np.array([5, 0, 0, 0, 0, 0]), 5, 5)
    first = None
    for t in range(1, 1001):
        rec, pol = step(pol, cat, prof, t, rng, hits)
        if first is None and 0 in rec.cache.files:
            first = t
        if first is not None:
            assert 0 in rec.cache.files
    assert first is not None


def test_labels():
    assert PolicySpec("cucbsc-L", L=10).label == "cucbsc-L(10)"
    assert PolicySpec("mcucbsc-sqrt").label == "mcucbsc-sqrt(2)"
    assert PolicySpec("delta-eps-greedy").label == "delta-eps-greedy(10,0.1)"
    with pytest.raises(ConfigurationError):
        PolicySpec("lru")
    with pytest.raises(ConfigurationError):
        PolicySpec("eps-greedy", epsilon=1.5)


def test_low_gamma_warns():
    cat = Catalog((1, 1, 1), capacity=2, max_users=2)
    prof = uniform_users_profile(cat, 0.5)
    with pytest.warns(UserWarning, match="below"):
        initialize(PolicySpec("cucbsc-sqrt", gamma=2.0), cat, prof)


def test_choose_cache_function_form():
    cat = Catalog((1, 1), capacity=1, max_users=2)
    prof = uniform_users_profile(cat, 0.5)
    pol = initialize(PolicySpec("iub"), cat, prof)
    assert choose_cache(pol, 1, np.random.default_rng(0)).files == (0,)
    assert isinstance(initialize(PolicySpec("eps-greedy"), cat, prof), EpsilonGreedy)


ALL_SPECS = [
    PolicySpec("cucb"),
    PolicySpec("cucbsc-L", L=3),
    PolicySpec("cucbsc-sqrt", gamma=2.2),
    PolicySpec("mcucbsc-L", L=4),
    PolicySpec("mcucbsc-sqrt"),
    PolicySpec("eps-greedy", epsilon=0.3),
    PolicySpec("delta-eps-greedy", delta_refresh=3, epsilon=0.4),
    PolicySpec("delta-myopic", delta_refresh=4),
    PolicySpec("iub"),
    PolicySpec("fixed", fixed_files=(1, 2)),
    PolicySpec("cucbsc-L", L=5, solver="exact"),
    PolicySpec("cucb", skip_blockers=True),
]


@pytest.mark.skipif("compiled" not in available_backends(), reason="compiled kernel not built")
@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: f"{s.label}-{s.solver}-{s.skip_blockers}")
def test_backends_agree(spec):
    cat = Catalog((1, 3, 2, 1, 2, 4, 1, 2), capacity=6, max_users=7)
    prof = uniform_users_profile(cat, 0.8)
    a = run_episode(cat, prof, spec, 1500, seed=21, backend="python", block=128)
    b = run_episode(cat, prof, spec, 1500, seed=21, backend="compiled", block=128)
    for key in ("reward", "cost", "requested", "used", "switched", "num_users", "change_t"):
        np.testing.assert_array_equal(getattr(a, key), getattr(b, key))
    assert a.change_sets == b.change_sets
