"""File universe, Zipf popularity profiles and per-period demand sampling.

Files are indexed ``0..F-1`` and index order is popularity rank: file 0 is
the most requested one.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

DEFAULT_SIZE_CLASSES = tuple((2**i, 50) for i in range(8))
# most popular file gets the smallest size class, then the next one up, wrapping around
DEFAULT_LAYOUT = "round-robin-asc"
SIZE_LAYOUTS = ("round-robin-asc", "round-robin-desc", "blocks")


@dataclass(frozen=True)
class Catalog:
    """File sizes (storage units), cache capacity ``M`` and max users ``U``."""

    sizes: tuple[int, ...]
    capacity: int
    max_users: int
    total_size: int = field(init=False)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if len(sizes) < 1:
            raise ValueError("catalog needs at least one file")
        if min(sizes) < 1:
            raise ValueError("file sizes must be >= 1")
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if self.max_users < 0:
            raise ValueError("max_users must be >= 0")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "total_size", sum(sizes))

    @property
    def num_files(self) -> int:
        return len(self.sizes)

    @property
    def size_array(self) -> np.ndarray:
        return np.asarray(self.sizes, dtype=np.int64)

    @property
    def relative_capacity(self) -> float:
        return self.capacity / self.total_size


@dataclass(frozen=True)
class PopularityProfile:
    theta: np.ndarray
    request_probs: np.ndarray
    mean_users: float
    max_users: int
    rho: float = float("nan")

    @property
    def num_files(self) -> int:
        return len(self.theta)


@dataclass(frozen=True)
class DemandVector:
    """Normalized demands ``d_f = count_f / U`` for one period."""

    counts: np.ndarray
    num_users: int
    max_users: int

    @property
    def d(self) -> np.ndarray:
        if self.max_users == 0:
            return np.zeros(len(self.counts))
        return self.counts / self.max_users


def round_robin_sizes(num_files: int, class_sizes: Sequence[int], descending: bool = False) -> tuple[int, ...]:
    """Assign sizes to popularity ranks by cycling through the size classes.

    The most popular file gets the smallest class, the next one the second
    smallest, and so on, wrapping around; ``descending`` reverses the cycle.
    """
    order = sorted(set(int(s) for s in class_sizes), reverse=descending)
    return tuple(order[f % len(order)] for f in range(num_files))


def sizes_from_classes(size_classes: Sequence[Sequence[int]], layout: str = DEFAULT_LAYOUT) -> tuple[int, ...]:
    """Expand ``[(size, count), ...]`` into a per-file size list."""
    counts = {int(s): int(c) for s, c in size_classes}
    num_files = sum(counts.values())
    if layout == "blocks":
        return tuple(s for s, c in size_classes for _ in range(int(c)))
    if layout not in ("round-robin-desc", "round-robin-asc"):
        raise ValueError(f"unknown size layout {layout!r}")
    order = sorted(counts, reverse=layout == "round-robin-desc")
    remaining = dict(counts)
    sizes: list[int] = []
    while len(sizes) < num_files:
        for s in order:
            if remaining[s] > 0:
                sizes.append(s)
                remaining[s] -= 1
    return tuple(sizes)


def default_catalog() -> Catalog:
    return Catalog(sizes_from_classes(DEFAULT_SIZE_CLASSES), capacity=512, max_users=50)


def build_zipf_profile(num_files: int, rho: float, mean_users: float, max_users: int) -> PopularityProfile:
    if num_files < 1:
        raise ValueError("num_files must be >= 1")
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    if not 0 <= mean_users <= max_users:
        raise ValueError(f"mean_users={mean_users} outside [0, {max_users}]")
    weights = np.arange(1, num_files + 1, dtype=float) ** -float(rho)
    probs = weights / weights.sum()
    scale = mean_users / max_users if max_users > 0 else 0.0
    return PopularityProfile(
        theta=scale * probs,
        request_probs=probs,
        mean_users=float(mean_users),
        max_users=int(max_users),
        rho=float(rho),
    )


def uniform_users_profile(catalog: Catalog, rho: float) -> PopularityProfile:
    """Zipf profile for users drawn uniformly from ``{0..U}`` (mean ``U/2``)."""
    return build_zipf_profile(catalog.num_files, rho, catalog.max_users / 2, catalog.max_users)


def _check_agree(profile: PopularityProfile, catalog: Catalog):
    if profile.num_files != catalog.num_files:
        raise ValueError(f"profile has {profile.num_files} files, catalog has {catalog.num_files}")


def sample_demand(profile: PopularityProfile, catalog: Catalog, rng: np.random.Generator) -> DemandVector:
    _check_agree(profile, catalog)
    users = int(rng.integers(0, catalog.max_users + 1))
    counts = rng.multinomial(users, profile.request_probs)
    return DemandVector(counts=counts.astype(np.int64), num_users=users, max_users=catalog.max_users)


def sample_demand_block(
    profile: PopularityProfile, catalog: Catalog, rng: np.random.Generator, periods: int
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``periods`` demand rows at once.

    Returns ``(counts, users)`` with ``counts`` of shape ``(periods, F)``.
    Every user independently picks a file from ``request_probs``, so each row
    has the same law as :func:`sample_demand` (the random stream differs).
    """
    _check_agree(profile, catalog)
    F = catalog.num_files
    users = rng.integers(0, catalog.max_users + 1, size=periods)
    total = int(users.sum())
    cdf = np.cumsum(profile.request_probs)
    cdf[-1] = 1.0
    picks = np.searchsorted(cdf, rng.random(total), side="right")
    np.minimum(picks, F - 1, out=picks)
    rows = np.repeat(np.arange(periods), users)
    flat = np.bincount(rows * F + picks, minlength=periods * F)
    return flat.reshape(periods, F).astype(np.int32), users.astype(np.int64)


class DemandStream:
    """Chunked demand generator for a whole episode.

    The stream depends only on its generator, so policies run on the same
    stream see identical demand sequences.
    """

    def __init__(self, profile: PopularityProfile, catalog: Catalog, rng: np.random.Generator, block: int = 1024):
        self.profile = profile
        self.catalog = catalog
        self.rng = rng
        self.block = block

    def blocks(self, horizon: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        done = 0
        while done < horizon:
            n = min(self.block, horizon - done)
            yield sample_demand_block(self.profile, self.catalog, self.rng, n)
            done += n


def catalog_from_config(cfg: dict) -> tuple[Catalog, PopularityProfile]:
    """Build catalog and profile from the flat config keys.

    Keys: ``num_files``, ``size_classes`` (list of ``[size, count]``) or
    ``sizes``, ``size_layout``, ``capacity``, ``max_users``, ``zipf_rho``.
    """
    if "sizes" in cfg:
        sizes = tuple(int(s) for s in cfg["sizes"])
    else:
        classes = cfg.get("size_classes", DEFAULT_SIZE_CLASSES)
        layout = cfg.get("size_layout", DEFAULT_LAYOUT)
        if "num_files" in cfg and int(cfg["num_files"]) != sum(int(c) for _, c in classes):
            desc = layout == "round-robin-desc"
            sizes = round_robin_sizes(int(cfg["num_files"]), [s for s, _ in classes], descending=desc)
        else:
            sizes = sizes_from_classes(classes, layout)
    if "num_files" in cfg and int(cfg["num_files"]) != len(sizes):
        raise ValueError(f"num_files={cfg['num_files']} but {len(sizes)} sizes given")
    catalog = Catalog(sizes, capacity=int(cfg.get("capacity", 512)), max_users=int(cfg.get("max_users", 50)))
    profile = uniform_users_profile(catalog, float(cfg.get("zipf_rho", 0.56)))
    return catalog, profile
