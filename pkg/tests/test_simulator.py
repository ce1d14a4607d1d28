import csv
import io

import numpy as np
import pytest

from cachebandit.catalog import Catalog, DemandVector, build_zipf_profile, default_catalog, uniform_users_profile
from cachebandit.policies import PolicySpec, initialize
from cachebandit.simulator import (
    TRACE_COLUMNS,
    replay_cost,
    run_episode,
    step,
    trace_csv_text,
    write_trace_csv,
)
from cachebandit.spo import solve_greedy


def test_step_accrues_full_demand_of_single_cached_file():
    cat = Catalog((1, 1), capacity=1, max_users=6)
    prof = build_zipf_profile(2, 1.0, 3.0, 6)
    pol = initialize(PolicySpec("iub"), cat, prof)
    rng = np.random.default_rng(0)
    total_reward, costs = 0, []
    for t in range(1, 11):
        rec, pol = step(pol, cat, prof, t, rng, DemandVector(np.array([6, 0]), 6, 6))
        assert rec.cache.files == (0,)
        total_reward += rec.reward
        costs.append(rec.cost)
    assert total_reward == 10 * 6
    assert costs == [1] + [0] * 9


def test_step_rejects_period_zero():
    cat = Catalog((1, 1), capacity=1, max_users=2)
    pol = initialize(PolicySpec("fixed", fixed_files=(0,)), cat)
    with pytest.raises(ValueError):
        step(pol, cat, uniform_users_profile(cat, 0.5), 0, np.random.default_rng(0))


def test_iub_pays_only_once():
    cat = default_catalog()
    prof = uniform_users_profile(cat, 0.56)
    tr = run_episode(cat, prof, PolicySpec("iub"), 2000, seed=3)
    assert tr.cost[0] == tr.used[0] <= cat.capacity
    assert not tr.cost[1:].any()
    assert set(tr.used) == {solve_greedy(prof.theta, cat).used}


def test_zero_horizon_gives_empty_trace():
    cat = Catalog((1, 2), capacity=2, max_users=3)
    tr = run_episode(cat, uniform_users_profile(cat, 0.5), PolicySpec("cucb"), 0, seed=0)
    assert len(tr) == 0 and tr.change_sets == []
    assert trace_csv_text(tr) == ",".join(TRACE_COLUMNS) + "\r\n"


@pytest.mark.parametrize("kind", ["cucbsc-sqrt", "delta-myopic", "eps-greedy"])
def test_episode_is_deterministic(kind):
    cat = Catalog((1, 2, 3, 1, 2, 1, 4), capacity=6, max_users=9)
    prof = uniform_users_profile(cat, 0.7)
    a = run_episode(cat, prof, PolicySpec(kind), 800, seed=(5, 6))
    b = run_episode(cat, prof, PolicySpec(kind), 800, seed=(5, 6))
    assert trace_csv_text(a) == trace_csv_text(b)
    c = run_episode(cat, prof, PolicySpec(kind), 800, seed=(5, 7))
    np.testing.assert_array_equal(a.num_users, c.num_users)  # demand stream is shared


def test_accounting_identities():
    cat = Catalog((1, 3, 2, 1, 2, 4, 1, 2), capacity=6, max_users=7)
    prof = uniform_users_profile(cat, 0.9)
    tr = run_episode(cat, prof, PolicySpec("delta-eps-greedy", delta_refresh=3, epsilon=0.5), 1500, seed=8, keep_demand=True)
    np.testing.assert_array_equal(replay_cost(tr, cat), tr.cost)
    mem = tr.membership()
    sizes = cat.size_array
    np.testing.assert_array_equal(tr.reward, (tr.demand * mem) @ sizes)
    np.testing.assert_array_equal(tr.requested, tr.demand @ sizes)
    np.testing.assert_array_equal(tr.used, mem @ sizes)
    np.testing.assert_array_equal(tr.num_users, tr.demand.sum(axis=1))
    assert np.all(tr.used <= cat.capacity)
    assert np.all(tr.reward <= tr.requested)
    for rec in tr.records():
        assert rec.cache.used == sum(cat.sizes[f] for f in rec.cache.files)
        if rec.t > 40:
            break


def test_trace_csv_layout(tmp_path):
    cat = Catalog((1, 2, 1), capacity=2, max_users=4)
    tr = run_episode(cat, uniform_users_profile(cat, 0.5), PolicySpec("cucb"), 25, seed=1)
    path = tmp_path / "trace.csv"
    write_trace_csv(tr, path)
    raw = path.read_bytes()
    assert raw.count(b"\r\n") == 26 and b"\n" not in raw.replace(b"\r\n", b"")
    rows = list(csv.reader(io.StringIO(raw.decode(), newline="")))
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert [int(r[0]) for r in rows[1:]] == list(range(1, 26))
    assert all(r[1] == "cucb" for r in rows[1:])


def test_pure_python_switch():
    import os
    import subprocess
    import sys

    env = dict(os.environ, CACHEBANDIT_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "from cachebandit.backend import DEFAULT_BACKEND, available_backends; print(DEFAULT_BACKEND, available_backends())"],
        env=env,
        capture_output=True,
        text=True,
        check=True,
    )
    assert out.stdout.split()[0] == "python"
