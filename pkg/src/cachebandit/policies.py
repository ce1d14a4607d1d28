"""Cache placement policies.

Bandit policies (CUCB, CUCBSC, MCUCBSC) spend periods ``1..F`` caching one
file each, then re-solve the placement only at switching periods of their
schedule. The practical policies (epsilon-greedy, refresh-epsilon-greedy,
myopic) and the informed baseline start caching at period 1.

All randomness comes from the ``rng`` handed to :meth:`Policy.choose_cache`
and is drawn in a fixed order, which the compiled kernel reproduces.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .catalog import Catalog, DemandVector, PopularityProfile
from .spo import CacheContent, random_fill, solve_exact, solve_greedy

BANDIT_KINDS = ("cucb", "cucbsc-L", "cucbsc-sqrt", "mcucbsc-L", "mcucbsc-sqrt")
POLICY_KINDS = BANDIT_KINDS + ("eps-greedy", "delta-eps-greedy", "delta-myopic", "iub", "fixed")


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class PolicySpec:
    kind: str
    L: int = 10
    gamma: float = 2.0
    epsilon: float = 0.1
    delta_refresh: int = 10
    solver: str = "greedy"
    skip_blockers: bool = False
    fixed_files: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ConfigurationError(f"unknown policy {self.kind!r}; expected one of {', '.join(POLICY_KINDS)}")
        if self.solver not in ("greedy", "exact"):
            raise ConfigurationError(f"unknown solver {self.solver!r}")
        if self.L < 1 or self.delta_refresh < 1:
            raise ConfigurationError("L and delta_refresh must be >= 1")
        if self.gamma <= 0:
            raise ConfigurationError("gamma must be positive")
        if not 0 <= self.epsilon <= 1:
            raise ConfigurationError("epsilon must lie in [0, 1]")

    @property
    def label(self) -> str:
        k = self.kind
        if k.endswith("-L"):
            return f"{k}({self.L})"
        if k.endswith("-sqrt"):
            return f"{k}({self.gamma:g})"
        if k == "eps-greedy":
            return f"{k}({self.epsilon:g})"
        if k == "delta-eps-greedy":
            return f"{k}({self.delta_refresh},{self.epsilon:g})"
        if k == "delta-myopic":
            return f"{k}({self.delta_refresh})"
        return k


@dataclass
class ArmStats:
    theta_hat: np.ndarray
    plays: np.ndarray

    @classmethod
    def zeros(cls, num_files: int) -> "ArmStats":
        return cls(np.zeros(num_files), np.zeros(num_files, dtype=np.int64))

    def update(self, files: np.ndarray, samples: np.ndarray):
        """Fold one sample per listed file into its running mean."""
        T = self.plays[files]
        self.theta_hat[files] = (self.theta_hat[files] * T + samples) / (T + 1)
        self.plays[files] = T + 1


# -- switching schedules ----------------------------------------------------

@dataclass(frozen=True)
class SwitchingSchedule:
    """Switching periods ``n_1 = F+1 < n_2 < ...``; ``b`` counts them."""

    kind: str  # "every", "constant", "sqrt"
    n: int
    b: int = 1
    L: int = 1
    gamma: float = 2.0

    @classmethod
    def start(cls, kind: str, num_files: int, L: int = 1, gamma: float = 2.0) -> "SwitchingSchedule":
        if kind not in ("every", "constant", "sqrt"):
            raise ValueError(f"unknown schedule kind {kind!r}")
        return cls(kind=kind, n=num_files + 1, b=1, L=L, gamma=gamma)

    @property
    def step(self) -> int:
        """``Delta(b) = n_{b+1} - n_b``."""
        if self.kind == "every":
            return 1
        if self.kind == "constant":
            return self.L
        return math.ceil(self.gamma * math.sqrt(self.n))


def advance_schedule(sched: SwitchingSchedule) -> SwitchingSchedule:
    return replace(sched, n=sched.n + sched.step, b=sched.b + 1)


def min_gamma(num_files: int) -> float:
    return 2 + 1 / math.sqrt(num_files + 1)


def max_gamma(num_files: int) -> float:
    return (num_files**2 + num_files - 1) / math.sqrt(num_files + 1)


# -- perturbations ----------------------------------------------------------

def _log(x):
    # scalar path stays on libm so both backends agree bit for bit
    return math.log(x) if np.ndim(x) == 0 else np.log(x)


def perturb_cucb(theta_hat, plays, t):
    plays = np.asarray(plays)
    if np.any(plays < 1):
        raise ValueError("perturbation needs plays >= 1")
    if np.any(np.asarray(t) < 1):
        raise ValueError("period must be >= 1")
    out = theta_hat + np.sqrt(3.0 * _log(t) / (2.0 * plays))
    return float(out) if np.ndim(out) == 0 else out


def mcucb_scale(num_files: int, rho: float) -> float:
    return float(num_files) ** -float(rho)


def perturb_mcucb(theta_hat, plays, t, num_files, rho, mean_users):
    """Perturbation shrunk by ``F^-rho`` and by the mean user count."""
    if mean_users <= 0:
        raise ValueError("mean_users must be positive")
    plays = np.asarray(plays)
    if np.any(plays < 1):
        raise ValueError("perturbation needs plays >= 1")
    if np.any(mean_users * np.asarray(t) < 1):
        raise ValueError("mean_users * t must be >= 1")
    scale = mcucb_scale(num_files, rho)
    out = theta_hat + scale * np.sqrt(3.0 * _log(mean_users * t) / (2.0 * mean_users * plays))
    return float(out) if np.ndim(out) == 0 else out


# -- policies ---------------------------------------------------------------

class Policy:
    """Mutable per-replicate policy state."""

    spec: PolicySpec

    def __init__(self, spec: PolicySpec, catalog: Catalog):
        self.spec = spec
        self.catalog = catalog
        self.sizes = catalog.size_array
        self.stats = ArmStats.zeros(catalog.num_files)
        self.cache = CacheContent.empty()
        self.t = 0

    def choose_cache(self, t: int, rng: np.random.Generator) -> CacheContent:
        cache = self._decide(t, rng)
        if cache is not None:
            self.cache = cache
        self.t = t
        return self.cache

    def _decide(self, t, rng):
        raise NotImplementedError

    def observe(self, demand: DemandVector):
        self.observe_counts(demand.counts, demand.max_users)

    def observe_counts(self, counts: np.ndarray, max_users: int):
        if not self.cache.files:
            return
        files = np.fromiter(self.cache.files, dtype=np.int64, count=len(self.cache.files))
        if max_users > 0:
            samples = counts[files] / max_users
        else:
            samples = np.zeros(len(files))
        self.stats.update(files, samples)
        self._after_observe(files, counts)

    def _after_observe(self, files, counts):
        pass

    def _solve(self, theta) -> CacheContent:
        if self.spec.solver == "exact":
            return solve_exact(theta, self.catalog)
        return solve_greedy(theta, self.catalog, skip_blockers=self.spec.skip_blockers)

    def _random_cache(self, rng, used=0, keep=(), exclude=None) -> CacheContent:
        perm = rng.permutation(self.catalog.num_files)
        added = random_fill(perm, self.sizes, self.catalog.capacity, used=used, exclude=exclude)
        return CacheContent.of(list(keep) + added, self.catalog)


class IndexPolicy(Policy):
    """CUCB / CUCBSC / MCUCBSC: perturbed sample means solved at switching periods."""

    def __init__(self, spec: PolicySpec, catalog: Catalog, profile: PopularityProfile | None = None):
        super().__init__(spec, catalog)
        F = catalog.num_files
        too_big = [f for f, s in enumerate(catalog.sizes) if s > catalog.capacity]
        if too_big:
            raise ConfigurationError(f"files {too_big[:5]} exceed capacity and can never be sampled")
        kind = spec.kind
        if kind == "cucb":
            self.schedule = SwitchingSchedule.start("every", F)
        elif kind.endswith("-L"):
            self.schedule = SwitchingSchedule.start("constant", F, L=spec.L)
        else:
            self.schedule = SwitchingSchedule.start("sqrt", F, gamma=spec.gamma)
            if spec.gamma < min_gamma(F):
                warnings.warn(
                    f"gamma={spec.gamma} is below {min_gamma(F):.4f}; the sqrt-schedule regret bound does not apply",
                    stacklevel=2,
                )
        self.modified = kind.startswith("mcucbsc")
        if self.modified:
            if profile is None:
                raise ConfigurationError("MCUCBSC needs the popularity profile for rho and mean users")
            if profile.mean_users <= 0:
                raise ConfigurationError("MCUCBSC needs a positive mean user count")
            self.rho = profile.rho
            self.mean_users = profile.mean_users

    def perturbed(self, t: int) -> np.ndarray:
        th, T = self.stats.theta_hat, self.stats.plays
        if self.modified:
            return perturb_mcucb(th, T, t, self.catalog.num_files, self.rho, self.mean_users)
        return perturb_cucb(th, T, t)

    def _decide(self, t, rng):
        F = self.catalog.num_files
        if t <= F:
            return CacheContent.of([t - 1], self.catalog)
        if t == self.schedule.n:
            self.schedule = advance_schedule(self.schedule)
            return self._solve(self.perturbed(t))
        return None


class EpsilonGreedy(Policy):
    """Exploit ``theta_hat`` or cache a random set; decides every ``delta`` periods."""

    def __init__(self, spec: PolicySpec, catalog: Catalog):
        super().__init__(spec, catalog)
        self.delta = spec.delta_refresh if spec.kind == "delta-eps-greedy" else 1

    def _decide(self, t, rng):
        if t == 1:
            return self._random_cache(rng)
        if (t - 1) % self.delta:
            return None
        if rng.random() < self.spec.epsilon:
            return self._random_cache(rng)
        return self._solve(self.stats.theta_hat)


class MyopicPolicy(Policy):
    """Keep files hit within the last ``delta`` periods, refill at random."""

    def __init__(self, spec: PolicySpec, catalog: Catalog):
        super().__init__(spec, catalog)
        self.delta = spec.delta_refresh
        self.last_hit = np.zeros(catalog.num_files, dtype=np.int64)

    def _decide(self, t, rng):
        if t == 1:
            return self._random_cache(rng)
        if (t - 1) % self.delta:
            return None
        keep = [f for f in self.cache.files if self.last_hit[f] >= t - self.delta]
        used = sum(self.catalog.sizes[f] for f in keep)
        current = self.cache.mask(self.catalog.num_files)
        return self._random_cache(rng, used=used, keep=keep, exclude=current)

    def _after_observe(self, files, counts):
        hit = files[counts[files] > 0]
        self.last_hit[hit] = self.t


class FixedPolicy(Policy):
    """Caches one set at period 1 and never changes it."""

    def __init__(self, spec: PolicySpec, catalog: Catalog, files=None):
        super().__init__(spec, catalog)
        self.target = CacheContent.of(spec.fixed_files if files is None else files, catalog)

    def _decide(self, t, rng):
        return self.target if t == 1 else None


class InformedPolicy(FixedPolicy):
    """Informed upper bound: solves once on the true profile."""

    def __init__(self, spec: PolicySpec, catalog: Catalog, profile: PopularityProfile):
        Policy.__init__(self, spec, catalog)
        self.target = self._solve(profile.theta)


PolicyState = Policy


def initialize(spec: PolicySpec, catalog: Catalog, profile: PopularityProfile | None = None) -> Policy:
    """Fresh policy state for one replicate."""
    if spec.kind in BANDIT_KINDS:
        return IndexPolicy(spec, catalog, profile)
    if spec.kind in ("eps-greedy", "delta-eps-greedy"):
        return EpsilonGreedy(spec, catalog)
    if spec.kind == "delta-myopic":
        return MyopicPolicy(spec, catalog)
    if spec.kind == "iub":
        if profile is None:
            raise ConfigurationError("the informed baseline needs the true profile")
        return InformedPolicy(spec, catalog, profile)
    return FixedPolicy(spec, catalog)


def choose_cache(state: Policy, t: int, rng: np.random.Generator) -> CacheContent:
    return state.choose_cache(t, rng)


def observe(state: Policy, demand: DemandVector) -> Policy:
    state.observe(demand)
    return state
