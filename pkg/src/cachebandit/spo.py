"""Single-period cache placement (a 0/1 knapsack).

``solve_greedy`` is the solver every policy uses. ``solve_exact`` is an
integer-capacity dynamic program used as the optimum for regret baselines
and as a test oracle.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .catalog import Catalog, PopularityProfile

DEFAULT_TABLE_LIMIT = 50_000_000


class BudgetExceeded(RuntimeError):
    """The exact solver's DP table or subset enumeration is too large."""


@dataclass(frozen=True)
class CacheContent:
    files: tuple[int, ...]
    used: int

    @classmethod
    def empty(cls) -> "CacheContent":
        return cls((), 0)

    @classmethod
    def of(cls, files: Iterable[int], catalog: Catalog) -> "CacheContent":
        files = tuple(sorted(int(f) for f in files))
        if len(set(files)) != len(files):
            raise ValueError("duplicate file in cache")
        used = sum(catalog.sizes[f] for f in files)
        if used > catalog.capacity:
            raise ValueError(f"cache uses {used} > capacity {catalog.capacity}")
        return cls(files, used)

    def __contains__(self, f) -> bool:
        return f in self.files

    def __len__(self) -> int:
        return len(self.files)

    def mask(self, num_files: int) -> np.ndarray:
        m = np.zeros(num_files, dtype=bool)
        m[list(self.files)] = True
        return m


@dataclass(frozen=True)
class SolverRating:
    alpha: float
    beta: float = 1.0


def greedy_order(theta: np.ndarray) -> np.ndarray:
    """File indices by ``theta`` descending, lower index first on ties."""
    theta = np.asarray(theta, dtype=float)
    return np.lexsort((np.arange(len(theta)), -theta))


def fill_in_order(order: Sequence[int], sizes: np.ndarray, capacity: int, skip_blockers: bool = False) -> list[int]:
    """Add files in ``order`` while they fit.

    Stops at the first file that does not fit unless ``skip_blockers``.
    """
    chosen = []
    used = 0
    for f in order:
        s = int(sizes[f])
        if used + s > capacity:
            if skip_blockers:
                continue
            break
        chosen.append(int(f))
        used += s
    return chosen


def solve_greedy(theta, catalog: Catalog, skip_blockers: bool = False) -> CacheContent:
    theta = np.asarray(theta, dtype=float)
    if len(theta) == 0:
        return CacheContent.empty()
    if len(theta) != catalog.num_files:
        raise ValueError("theta length does not match catalog")
    sizes = catalog.size_array
    order = greedy_order(theta)
    if skip_blockers:
        chosen = fill_in_order(order, sizes, catalog.capacity, skip_blockers=True)
    else:
        # stop-at-first-blocker equals taking the longest prefix that fits
        k = int(np.searchsorted(np.cumsum(sizes[order]), catalog.capacity, side="right"))
        chosen = order[:k].tolist()
    return CacheContent.of(chosen, catalog)


def solve_exact(theta, catalog: Catalog, table_limit: int = DEFAULT_TABLE_LIMIT) -> CacheContent:
    """Maximize ``sum S_f theta_f`` under the capacity, by DP over capacities.

    Among optimal sets the one that includes lower-indexed files earliest is
    returned (lexicographically largest indicator vector).
    """
    theta = np.asarray(theta, dtype=float)
    F = len(theta)
    if F == 0:
        return CacheContent.empty()
    if F != catalog.num_files:
        raise ValueError("theta length does not match catalog")
    M = catalog.capacity
    if F * (M + 1) > table_limit:
        raise BudgetExceeded(f"DP table {F}x{M + 1} exceeds limit {table_limit}")
    sizes = catalog.size_array
    values = sizes * theta
    # best[i, c]: optimum over files i..F-1 with capacity c
    best = np.zeros((F + 1, M + 1))
    for i in range(F - 1, -1, -1):
        best[i] = best[i + 1]
        s = sizes[i]
        if s <= M:
            take = best[i + 1, : M + 1 - s] + values[i]
            np.maximum(best[i + 1, s:], take, out=best[i, s:])
    chosen = []
    c = M
    for i in range(F):
        s = sizes[i]
        if s <= c and best[i + 1, c - s] + values[i] >= best[i + 1, c]:
            chosen.append(i)
            c -= s
    return CacheContent.of(chosen, catalog)


def expected_reward(cache: CacheContent, theta, catalog: Catalog) -> float:
    """``U * sum_{f in cache} S_f theta_f``."""
    theta = np.asarray(theta, dtype=float)
    total = 0.0
    for f in cache.files:
        total += catalog.sizes[f] * theta[f]
    return catalog.max_users * total


def measure_alpha(catalog: Catalog, profile: PopularityProfile, table_limit: int = DEFAULT_TABLE_LIMIT) -> SolverRating:
    greedy = expected_reward(solve_greedy(profile.theta, catalog), profile.theta, catalog)
    exact = expected_reward(solve_exact(profile.theta, catalog, table_limit), profile.theta, catalog)
    if exact == 0:
        return SolverRating(alpha=1.0)
    return SolverRating(alpha=greedy / exact)


def random_fill(perm: Sequence[int], sizes: np.ndarray, capacity: int, used: int = 0, exclude=None) -> list[int]:
    """Walk a random permutation and add candidates until one does not fit."""
    chosen = []
    for f in perm:
        f = int(f)
        if exclude is not None and exclude[f]:
            continue
        s = int(sizes[f])
        if used + s > capacity:
            break
        chosen.append(f)
        used += s
    return chosen


def feasible_subsets(catalog: Catalog, limit: int = 22) -> Iterable[tuple[int, ...]]:
    """Every subset that fits in the cache, by bitmask order."""
    F = catalog.num_files
    if F > limit:
        raise BudgetExceeded(f"enumerating 2^{F} subsets exceeds limit 2^{limit}")
    sizes = catalog.sizes
    for mask in range(1 << F):
        files = tuple(f for f in range(F) if mask >> f & 1)
        if sum(sizes[f] for f in files) <= catalog.capacity:
            yield files
