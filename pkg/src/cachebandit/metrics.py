"""Regret decomposition, cache efficiency and closed-form regret bounds.

Regret is measured against ``alpha * beta * r_opt`` using the expected
reward ``r_Theta`` of the cache actually held each period, so demand noise
does not enter the regret curves.

The bound constants need the sets of good and bad arm combinations, which
are enumerated exhaustively; that restricts bound evaluation to small
catalogs (``F <= 22``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .catalog import Catalog, PopularityProfile
from .policies import SwitchingSchedule
from .simulator import EpisodeTrace
from .spo import BudgetExceeded, CacheContent, expected_reward, feasible_subsets, solve_exact

REL_TOL = 1e-12
K1_SQRT_SLOPE = 4.12


class UndefinedEfficiency(ZeroDivisionError):
    """No data was requested over the horizon."""


class DegenerateInstance(ValueError):
    pass


@dataclass
class RegretLedger:
    cum_reward: float
    cum_cost: float
    sampling_regret: np.ndarray
    switching_regret: np.ndarray
    total_regret: np.ndarray
    r_opt: float
    alpha: float
    beta: float
    w: float


def optimal_reward(catalog: Catalog, profile: PopularityProfile) -> float:
    return expected_reward(solve_exact(profile.theta, catalog), profile.theta, catalog)


def sampling_regret(trace: EpisodeTrace, r_opt: float, alpha: float, beta: float, profile: PopularityProfile, catalog: Catalog) -> np.ndarray:
    if trace.num_files != profile.num_files or profile.num_files != catalog.num_files:
        raise ValueError("trace, profile and catalog disagree on the number of files")
    # summing per-period gaps keeps a policy that holds the target cache at exactly 0
    return np.cumsum(alpha * beta * r_opt - trace.expected_rewards(profile.theta, catalog))


def switching_regret(trace: EpisodeTrace, catalog: Catalog) -> np.ndarray:
    return np.cumsum(trace.cost).astype(float) - catalog.capacity


def regret_ledger(
    trace: EpisodeTrace,
    catalog: Catalog,
    profile: PopularityProfile,
    r_opt: float,
    alpha: float = 1.0,
    beta: float = 1.0,
    w: float = 1.0,
) -> RegretLedger:
    sa = sampling_regret(trace, r_opt, alpha, beta, profile, catalog)
    sw = switching_regret(trace, catalog)
    return RegretLedger(
        cum_reward=float(trace.reward.sum()),
        cum_cost=float(trace.cost.sum()),
        sampling_regret=sa,
        switching_regret=sw,
        total_regret=sa + w * sw,
        r_opt=r_opt,
        alpha=alpha,
        beta=beta,
        w=w,
    )


def cache_efficiency(trace: EpisodeTrace, w: float = 1.0) -> float:
    """Net offloaded traffic over all requested traffic (a fraction)."""
    requested = int(trace.requested.sum())
    if requested == 0:
        raise UndefinedEfficiency("no data requested over the horizon")
    return (float(trace.reward.sum()) - w * float(trace.cost.sum())) / requested


def efficiency_series(trace: EpisodeTrace, w: float = 1.0) -> np.ndarray:
    """Cumulative efficiency at every period; NaN while nothing was requested."""
    num = np.cumsum(trace.reward).astype(float) - w * np.cumsum(trace.cost)
    den = np.cumsum(trace.requested).astype(float)
    out = np.full(trace.horizon, np.nan)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


# -- good/bad combinations --------------------------------------------------

def _is_good(reward: float, threshold: float) -> bool:
    return reward >= threshold - REL_TOL * max(1.0, abs(threshold))


def classify_good_bad(cache: CacheContent, profile: PopularityProfile, alpha: float, r_opt: float, catalog: Catalog) -> str:
    r = expected_reward(cache, profile.theta, catalog)
    return "good" if _is_good(r, alpha * r_opt) else "bad"


def bad_periods(trace: EpisodeTrace, profile: PopularityProfile, catalog: Catalog, alpha: float, r_opt: float) -> np.ndarray:
    """Boolean per period: the held cache is a bad combination."""
    thr = alpha * r_opt
    seg = trace.segment_rewards(profile.theta, catalog)
    seg_bad = seg < thr - REL_TOL * max(1.0, abs(thr))
    return seg_bad[trace.segment_index()]


@dataclass
class BadPeriodCounters:
    """Per-arm counters bumped only at bad periods.

    Each bad period increments the cached arm with the smallest counter
    (lowest index on ties). Bad periods with an empty cache have no arm to
    charge and are tallied in ``unattributed``.
    """

    N: np.ndarray
    unattributed: int = 0

    @classmethod
    def zeros(cls, num_files: int) -> "BadPeriodCounters":
        return cls(np.zeros(num_files, dtype=np.int64))

    @property
    def total(self) -> int:
        return int(self.N.sum()) + self.unattributed

    def charge(self, files, periods: int = 1):
        files = list(files)
        if not files:
            self.unattributed += periods
            return
        for _ in range(periods):
            sub = self.N[files]
            self.N[files[int(np.argmin(sub))]] += 1


def bad_period_counters(trace: EpisodeTrace, profile: PopularityProfile, catalog: Catalog, alpha: float, r_opt: float) -> tuple[BadPeriodCounters, np.ndarray]:
    """Final counters and the running number of bad periods."""
    bad = bad_periods(trace, profile, catalog, alpha, r_opt)
    counters = BadPeriodCounters.zeros(catalog.num_files)
    bounds = list(trace.change_t) + [trace.horizon + 1]
    if bounds[0] > 1:
        counters.charge((), int(bad[: bounds[0] - 1].sum()))
    for k, files in enumerate(trace.change_sets):
        lo, hi = bounds[k] - 1, bounds[k + 1] - 1
        n_bad = int(bad[lo:hi].sum())
        if n_bad:
            counters.charge(files, n_bad)
    return counters, np.cumsum(bad)


# -- bound constants --------------------------------------------------------

@dataclass
class BoundConstants:
    r_opt: float
    alpha: float
    Delta_u: float
    Delta_l: float
    M_u: float
    M_l: float
    M: int
    K_1: float
    K_1_partial: float
    K_1_tail: float
    g_inv_slope: float
    C: float | None
    schedule: str
    num_files: int
    num_good: int
    num_bad: int
    extras: dict = field(default_factory=dict)

    def g_inv(self, x):
        """Inverse of the linear reward-deviation envelope ``g(L) = U M L``."""
        return x * self.g_inv_slope

    def l_t(self, t):
        t = np.asarray(t, dtype=float)
        return 6.0 * np.log(t) / self.g_inv(self.Delta_l) ** 2

    def as_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "extras"}
        d.update(self.extras)
        return d


def schedule_steps(sched: SwitchingSchedule, n_max: float, max_terms: int | None = None):
    """Yield ``(b, n_b, Delta(b))`` while ``n_b <= n_max``."""
    kind, n, b, L, gamma = sched.kind, sched.n, sched.b, sched.L, sched.gamma
    k = 0
    while n <= n_max and (max_terms is None or k < max_terms):
        if kind == "every":
            d = 1
        elif kind == "constant":
            d = L
        else:
            d = math.ceil(gamma * math.sqrt(n))
        yield b, n, d
        n += d
        b += 1
        k += 1


def k1_closed_form(sched: SwitchingSchedule) -> float:
    if sched.kind == "sqrt":
        return math.pi**2 / 3 + K1_SQRT_SLOPE * sched.gamma
    L = 1 if sched.kind == "every" else sched.L
    return math.pi**2 / (3 * L)


def k1_partial_sum(sched: SwitchingSchedule, max_terms: int = 200_000) -> tuple[float, float]:
    """``2 sum Delta(j)/n_j^2`` over the first terms, and a bound on the rest.

    ``Delta(j)/n_j^2 = (n_{j+1}/n_j) * integral of dn/n^2 over [n_j, n_{j+1}]``
    and the ratio is nonincreasing, so the remainder after the last term is
    at most ``2 (1 + Delta/n) / n`` at the next switching period.
    """
    total = 0.0
    n_next, d_next = sched.n, sched.step
    for _, n, d in schedule_steps(sched, math.inf, max_terms):
        total += 2.0 * d / n**2
        n_next = n + d
    d_next = SwitchingSchedule(sched.kind, n_next, L=sched.L, gamma=sched.gamma).step
    tail = 2.0 * (1 + d_next / n_next) / n_next
    return total, tail


def compute_bound_constants(
    catalog: Catalog,
    profile: PopularityProfile,
    alpha: float,
    schedule: SwitchingSchedule,
    enum_limit: int = 22,
    pair_limit: int = 4_000_000,
) -> BoundConstants:
    if catalog.num_files > enum_limit:
        raise BudgetExceeded(f"bound constants need 2^{catalog.num_files} subsets; limit is 2^{enum_limit}")
    F = catalog.num_files
    sizes = catalog.size_array
    subsets = list(feasible_subsets(catalog, enum_limit))
    mem = np.zeros((len(subsets), F), dtype=bool)
    for i, s in enumerate(subsets):
        mem[i, list(s)] = True
    rewards = np.array([expected_reward(CacheContent(s, 0), profile.theta, catalog) for s in subsets])
    used = mem.astype(np.int64) @ sizes
    r_opt = float(rewards.max())
    thr = alpha * r_opt
    good = np.array([_is_good(r, thr) for r in rewards])
    bad_r = rewards[~good]
    if len(bad_r) == 0:
        raise DegenerateInstance("every feasible cache is good; Delta_u and Delta_l are undefined")
    Delta_u = thr - float(bad_r.min())
    Delta_l = thr - float(bad_r.max())
    M_u = float(used.max())
    G = mem[good]
    if len(G) ** 2 > pair_limit:
        raise BudgetExceeded(f"{len(G)} good combinations: pairwise switch costs exceed limit")
    # c(A, B) = sum of sizes in A but not in B
    Gi = G.astype(np.int64)
    used_g = Gi @ sizes
    overlap = (Gi * sizes) @ Gi.T
    M_l = float((used_g[:, None] - overlap).max()) if len(G) else 0.0
    K_1 = k1_closed_form(schedule)
    K_1_partial, K_1_tail = k1_partial_sum(schedule)
    g_inv_slope = 1.0 / (catalog.max_users * catalog.capacity)
    consts = BoundConstants(
        r_opt=r_opt,
        alpha=alpha,
        Delta_u=Delta_u,
        Delta_l=Delta_l,
        M_u=M_u,
        M_l=M_l,
        M=catalog.capacity,
        K_1=K_1,
        K_1_partial=K_1_partial,
        K_1_tail=K_1_tail,
        g_inv_slope=g_inv_slope,
        C=None,
        schedule=schedule.kind,
        num_files=F,
        num_good=int(good.sum()),
        num_bad=int((~good).sum()),
        extras={"L": schedule.L, "gamma": schedule.gamma},
    )
    if schedule.kind == "sqrt":
        consts.C = sqrt_schedule_constant(consts, schedule.gamma)
    return consts


def sqrt_schedule_constant(c: BoundConstants, gamma: float) -> float:
    """t-independent switching-regret term of the sqrt-schedule bound.

    ``2 (M_u - M_l)`` times the constant part of the bound on switches into
    bad combinations, plus ``F M_u - M_l``.
    """
    F = c.num_files
    n1 = F + 1
    d1 = math.ceil(gamma * math.sqrt(n1))
    d2 = math.ceil(gamma * math.sqrt(n1 + d1))
    ginv2 = c.g_inv(c.Delta_l) ** 2
    sw_const = (
        6.0 * F / ginv2 * math.log(F + 1) / d1
        + F * (1 + math.pi**2 / 6 + gamma)
        + F * (math.pi**2 / 3 + K1_SQRT_SLOPE * gamma) / d2
        - F / d1
    )
    return sw_const * 2 * (c.M_u - c.M_l) + F * c.M_u - c.M_l


def theorem1_bound(c: BoundConstants, t, w: float = 1.0, gamma: float = 2.0, beta: float = 1.0):
    """Regret bound of the sqrt schedule ``Delta(j) = ceil(gamma sqrt(n_j))``."""
    if c.M_u == c.M_l:
        raise DegenerateInstance("M_u == M_l: the bound divides by M_u - M_l")
    F = c.num_files
    t = np.asarray(t, dtype=float)
    spread = c.M_u - c.M_l
    ginv2 = c.g_inv(c.Delta_l) ** 2
    C = c.C if c.C is not None else sqrt_schedule_constant(c, gamma)
    log_term = np.log(t) * (6.0 / ginv2 * (w + c.Delta_u / (2 * spread)) + w * gamma / 2) * 2 * F * spread
    sqrt_term = np.sqrt(t) * (w * c.M_u + w * spread * (1 - 2 * beta) + F * c.Delta_u * gamma)
    const = (math.pi**2 / 3 + K1_SQRT_SLOPE * gamma + 1) * F * c.Delta_u + w * C
    out = log_term + sqrt_term + const
    return float(out) if out.ndim == 0 else out


def theorem2_bound(c: BoundConstants, t, w: float = 1.0, L: int = 1):
    """Regret bound of the constant schedule ``Delta(j) = L`` with an exact solver."""
    if L < 1:
        raise ValueError("L must be >= 1")
    F = c.num_files
    t = np.asarray(t, dtype=float)
    ginv2 = c.g_inv(c.Delta_l) ** 2
    switch = 2 * c.M_u / L
    out = (
        6.0 * F * np.log(t) / ginv2 * (c.Delta_u + w * switch)
        + F * c.Delta_u * (math.pi**2 / 3 + L)
        + w * F * switch * (math.pi**2 / (3 * L) + 3 / (2 * L) - 1 + math.log(1 + (L - 1) / (F + 1)) / ginv2)
    )
    return float(out) if out.ndim == 0 else out


def switching_periods_until(sched: SwitchingSchedule, t: int) -> tuple[int, int]:
    """``(b, max_{j<=b} Delta(j))`` for ``n_b <= t < n_{b+1}``; ``(0, 0)`` before ``n_1``."""
    b, biggest = 0, 0
    for j, _, d in schedule_steps(sched, t):
        b, biggest = j, max(biggest, d)
    return b, biggest


def bad_period_bound(c: BoundConstants, sched: SwitchingSchedule, t, beta: float = 1.0) -> np.ndarray:
    """Right-hand side of the bound on the expected number of bad periods."""
    F = c.num_files
    ts = np.atleast_1d(np.asarray(t, dtype=np.int64))
    # running max of Delta(j) over switching periods, evaluated at each t
    pts = list(schedule_steps(sched, int(ts.max())))
    n_b = np.array([n for _, n, _ in pts], dtype=np.int64)
    dmax = np.maximum.accumulate(np.array([d for _, _, d in pts], dtype=float)) if pts else np.zeros(0)
    idx = np.searchsorted(n_b, ts, side="right") - 1
    max_step = np.where(idx >= 0, dmax[np.maximum(idx, 0)] if len(dmax) else 0.0, 0.0)
    return (1 - beta) * np.maximum(ts - F, 0) + F * (c.K_1 + c.l_t(ts) + max_step)


def bad_period_bound_check(mean_bad_counts, checkpoints, c: BoundConstants, sched: SwitchingSchedule, beta: float = 1.0) -> bool:
    """Whether the seed-averaged bad-period count stays under the bound at every checkpoint."""
    rhs = bad_period_bound(c, sched, checkpoints, beta)
    return bool(np.all(np.asarray(mean_bad_counts, dtype=float) <= rhs))
