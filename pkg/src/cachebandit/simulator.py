"""Period loop: decide the cache, charge placement cost, realize demand,
accrue reward, and let the policy observe the cached files' demand.

Reward, cost and requested traffic are integers in data units: a cached
file ``f`` requested ``c`` times yields ``c * S_f`` (``U d_f S_f`` with
``d_f = c / U``).
"""
from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .backend import kernel_class
from .catalog import Catalog, DemandStream, DemandVector, PopularityProfile, sample_demand
from .policies import Policy, PolicySpec, initialize
from .spo import CacheContent

TRACE_COLUMNS = ("t", "policy", "seed", "num_users", "reward", "cost", "requested_total", "cache_used", "num_switched_files")


@dataclass(frozen=True)
class PeriodRecord:
    t: int
    cache: CacheContent
    reward: int
    cost: int
    num_users: int
    requested_total: int
    num_switched: int = 0


@dataclass
class EpisodeTrace:
    """One policy trajectory over ``N`` periods.

    Cache contents are stored as change points: ``change_t[k]`` is the first
    period holding ``change_sets[k]``. Before ``change_t[0]`` the cache is
    empty.
    """

    policy: str
    seed: str
    fingerprint: str
    num_files: int
    num_users: np.ndarray
    reward: np.ndarray
    cost: np.ndarray
    requested: np.ndarray
    used: np.ndarray
    switched: np.ndarray
    change_t: np.ndarray
    change_sets: list
    demand: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.reward)

    @property
    def horizon(self) -> int:
        return len(self.reward)

    def segment_index(self) -> np.ndarray:
        """For each period, the index of its change point (-1 = empty cache)."""
        t = np.arange(1, self.horizon + 1)
        return np.searchsorted(self.change_t, t, side="right") - 1

    def cache_at(self, t: int) -> tuple[int, ...]:
        k = int(np.searchsorted(self.change_t, t, side="right")) - 1
        return self.change_sets[k] if k >= 0 else ()

    def membership(self) -> np.ndarray:
        m = np.zeros((self.horizon, self.num_files), dtype=bool)
        bounds = list(self.change_t) + [self.horizon + 1]
        for k, files in enumerate(self.change_sets):
            m[bounds[k] - 1 : bounds[k + 1] - 1, list(files)] = True
        return m

    def segment_rewards(self, theta, catalog: Catalog) -> np.ndarray:
        """``r_Theta`` of every change-point set, plus a trailing 0 for the empty cache."""
        lengths = np.fromiter((len(s) for s in self.change_sets), dtype=np.int64, count=len(self.change_sets))
        flat = np.fromiter(itertools.chain.from_iterable(self.change_sets), dtype=np.int64, count=int(lengths.sum()))
        seg = np.repeat(np.arange(len(self.change_sets)), lengths)
        weights = catalog.size_array[flat] * np.asarray(theta, dtype=float)[flat]
        # bincount accumulates in file order, matching spo.expected_reward
        sums = np.bincount(seg, weights=weights, minlength=len(self.change_sets))
        return np.append(catalog.max_users * sums, 0.0)

    def expected_rewards(self, theta, catalog: Catalog) -> np.ndarray:
        """``r_Theta`` of the cache held in each period."""
        return self.segment_rewards(theta, catalog)[self.segment_index()]

    def records(self) -> Iterator[PeriodRecord]:
        seg = self.segment_index()
        for i in range(self.horizon):
            files = self.change_sets[seg[i]] if seg[i] >= 0 else ()
            yield PeriodRecord(
                t=i + 1,
                cache=CacheContent(tuple(files), int(self.used[i])),
                reward=int(self.reward[i]),
                cost=int(self.cost[i]),
                num_users=int(self.num_users[i]),
                requested_total=int(self.requested[i]),
                num_switched=int(self.switched[i]),
            )


def step(
    policy: Policy,
    catalog: Catalog,
    profile: PopularityProfile,
    t: int,
    rng: np.random.Generator,
    demand: DemandVector | None = None,
) -> tuple[PeriodRecord, Policy]:
    """Run period ``t``: decide, pay, sample demand, collect, observe."""
    if t < 1:
        raise ValueError("periods start at 1")
    previous = policy.cache
    cache = policy.choose_cache(t, rng)
    new = [f for f in cache.files if f not in previous.files]
    cost = sum(catalog.sizes[f] for f in new)
    if demand is None:
        demand = sample_demand(profile, catalog, rng)
    counts = np.asarray(demand.counts, dtype=np.int64)
    sizes = catalog.size_array
    reward = int(sum(int(counts[f]) * catalog.sizes[f] for f in cache.files))
    record = PeriodRecord(
        t=t,
        cache=cache,
        reward=reward,
        cost=int(cost),
        num_users=int(demand.num_users),
        requested_total=int(counts @ sizes),
        num_switched=len(new),
    )
    policy.observe(demand)
    return record, policy


def episode_streams(seed) -> tuple[np.random.Generator, np.random.Generator]:
    """Demand and policy generators for one replicate.

    ``seed`` is an int (split into two child streams) or a pair of seeds /
    ``SeedSequence`` objects used directly.
    """
    if isinstance(seed, tuple):
        demand_seed, policy_seed = seed
    else:
        demand_seed, policy_seed = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(demand_seed), np.random.default_rng(policy_seed)


def _seed_label(seed) -> str:
    if isinstance(seed, tuple):
        parts = []
        for s in seed:
            if isinstance(s, np.random.SeedSequence):
                parts.append(f"{s.entropy}:{'/'.join(map(str, s.spawn_key))}")
            else:
                parts.append(str(s))
        return "|".join(parts)
    return str(seed)


def fingerprint(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def run_episode(
    catalog: Catalog,
    profile: PopularityProfile,
    spec: PolicySpec | Policy,
    horizon: int,
    seed=0,
    backend: str | None = None,
    keep_demand: bool = False,
    block: int = 1024,
    config_fingerprint: str = "",
) -> EpisodeTrace:
    """Simulate ``horizon`` periods; deterministic given ``seed``."""
    policy = spec if isinstance(spec, Policy) else initialize(spec, catalog, profile)
    demand_rng, policy_rng = episode_streams(seed)
    kernel = kernel_class(backend)(policy, policy_rng)
    F = catalog.num_files
    parts = {k: [] for k in ("reward", "cost", "requested", "used", "switched", "users")}
    demand_blocks = []
    change_t: list[int] = []
    change_sets: list[tuple[int, ...]] = []
    prev = policy.cache.mask(F).astype(np.uint8)
    t0 = 0
    for counts, users in DemandStream(profile, catalog, demand_rng, block).blocks(horizon):
        out = kernel.run_block(counts, users)
        mem = out["membership"]
        rows = np.vstack([prev[None, :], mem])
        changed = np.flatnonzero(np.any(rows[1:] != rows[:-1], axis=1))
        for i in changed:
            change_t.append(t0 + int(i) + 1)
            change_sets.append(tuple(np.flatnonzero(mem[i]).tolist()))
        prev = mem[-1].copy() if len(mem) else prev
        t0 += len(counts)
        for k in ("reward", "cost", "requested", "used", "switched"):
            parts[k].append(out[k])
        parts["users"].append(users)
        if keep_demand:
            demand_blocks.append(counts)

    def cat(key, dtype=np.int64):
        return np.concatenate(parts[key]).astype(dtype) if parts[key] else np.zeros(0, dtype=dtype)

    label = policy.spec.label
    return EpisodeTrace(
        policy=label,
        seed=_seed_label(seed),
        fingerprint=config_fingerprint,
        num_files=F,
        num_users=cat("users"),
        reward=cat("reward"),
        cost=cat("cost"),
        requested=cat("requested"),
        used=cat("used"),
        switched=cat("switched"),
        change_t=np.asarray(change_t, dtype=np.int64),
        change_sets=change_sets,
        demand=np.concatenate(demand_blocks) if keep_demand and demand_blocks else None,
    )


def replay_cost(trace: EpisodeTrace, catalog: Catalog) -> np.ndarray:
    """Per-period placement cost recomputed from the cache sets alone."""
    cost = np.zeros(trace.horizon, dtype=np.int64)
    previous: set[int] = set()
    for t, files in zip(trace.change_t, trace.change_sets):
        cost[t - 1] = sum(catalog.sizes[f] for f in set(files) - previous)
        previous = set(files)
    return cost


def write_trace_csv(trace: EpisodeTrace, out) -> None:
    """One RFC-4180 row per period."""
    close = False
    if not hasattr(out, "write"):
        out = open(out, "w", newline="", encoding="utf-8")
        close = True
    try:
        w = csv.writer(out, lineterminator="\r\n")
        w.writerow(TRACE_COLUMNS)
        for i in range(trace.horizon):
            w.writerow(
                (
                    i + 1,
                    trace.policy,
                    trace.seed,
                    int(trace.num_users[i]),
                    int(trace.reward[i]),
                    int(trace.cost[i]),
                    int(trace.requested[i]),
                    int(trace.used[i]),
                    int(trace.switched[i]),
                )
            )
    finally:
        if close:
            out.close()


def trace_csv_text(trace: EpisodeTrace) -> str:
    buf = io.StringIO(newline="")
    write_trace_csv(trace, buf)
    return buf.getvalue()
