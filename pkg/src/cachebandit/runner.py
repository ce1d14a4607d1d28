"""Experiment orchestration: configs, seeds, replicate averaging, sweeps and
CSV/JSON output.

A run expands the config into sweep points, and every (point, policy,
replicate) triple into one episode. Demand streams are keyed by (point,
replicate) only, so all policies at a point see the same demand sequences
(paired comparisons); policy randomness is keyed additionally by the policy
label. Results are folded in a fixed order, so outputs do not depend on the
number of workers.
"""
from __future__ import annotations

import csv
import json
import math
import re
import sys
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import __version__
from .backend import DEFAULT_BACKEND
from .catalog import DEFAULT_LAYOUT, DEFAULT_SIZE_CLASSES, SIZE_LAYOUTS, Catalog, PopularityProfile, round_robin_sizes, sizes_from_classes, uniform_users_profile
from .metrics import (
    BoundConstants,
    DegenerateInstance,
    bad_period_bound,
    bad_periods,
    compute_bound_constants,
    efficiency_series,
    regret_ledger,
    theorem1_bound,
    theorem2_bound,
)
from .policies import POLICY_KINDS, ConfigurationError, PolicySpec, SwitchingSchedule, max_gamma, min_gamma
from .simulator import fingerprint, run_episode, write_trace_csv
from .spo import BudgetExceeded, expected_reward, solve_exact, solve_greedy

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

SWEEP_AXES = ("none", "rho", "capacity", "mean_users", "num_files")
DEFAULT_POLICIES = (
    "cucb",
    "cucbsc-L",
    "cucbsc-sqrt",
    "eps-greedy",
    "delta-eps-greedy",
    "mcucbsc-L",
    "mcucbsc-sqrt",
    "delta-myopic",
    "iub",
)
POLICY_PARAM_KEYS = ("L", "gamma", "epsilon", "delta_refresh", "solver", "skip_blockers")
ENUM_LIMIT = 22

AGGREGATE_COLUMNS = (
    "config_fingerprint",
    "sweep",
    "sweep_value",
    "policy",
    "t",
    "replicates",
    "mean_sampling_regret",
    "se_sampling_regret",
    "mean_switching_regret",
    "se_switching_regret",
    "mean_total_regret",
    "se_total_regret",
    "theorem_bound",
    "efficiency",
    "se_efficiency",
    "mean_bad_periods",
)
FINAL_COLUMNS = (
    "config_fingerprint",
    "sweep",
    "sweep_value",
    "policy",
    "replicates",
    "horizon",
    "num_files",
    "capacity",
    "max_users",
    "mean_users",
    "relative_capacity",
    "alpha",
    "r_opt",
    "efficiency",
    "se_efficiency",
    "mean_sampling_regret",
    "mean_switching_regret",
    "mean_total_regret",
    "theorem_bound",
    "mean_reward",
    "mean_cost",
    "mean_requested",
)


class ConfigError(ConfigurationError):
    """Invalid experiment config; the message names the key (and line when known)."""


# -- config -----------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    num_files: int | None = None
    size_classes: tuple[tuple[int, int], ...] = tuple(tuple(c) for c in DEFAULT_SIZE_CLASSES)
    sizes: tuple[int, ...] | None = None
    size_layout: str = DEFAULT_LAYOUT
    capacity: int = 512
    max_users: int = 50
    zipf_rho: float = 0.56
    horizon: int = 50_000
    replicates: int = 500
    w: float = 1.0
    policies: tuple[PolicySpec, ...] = ()
    sweep: str = "none"
    sweep_values: tuple[float, ...] = ()
    seed: int = 0
    full_resolution: bool = False
    dense_until: int = 1000
    stride: int = 10
    # execution only; never part of the fingerprint
    workers: int = 1

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "workers"}
        d["size_classes"] = [list(c) for c in self.size_classes]
        d["sizes"] = list(self.sizes) if self.sizes is not None else None
        d["sweep_values"] = list(self.sweep_values)
        d["policies"] = [_policy_dict(p) for p in self.policies]
        return d

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.to_dict())



def _policy_dict(spec: PolicySpec) -> dict:
    d = asdict(spec)
    d["fixed_files"] = list(spec.fixed_files)
    return d


def default_paper_config() -> ExperimentConfig:
    """F=400 (50 files of each size 2^0..2^7), M=512, U=50, rho=0.56, N=5e4, R=500."""
    return ExperimentConfig(policies=tuple(PolicySpec(kind) for kind in DEFAULT_POLICIES))


_SCALARS = {
    "num_files": int,
    "size_layout": str,
    "capacity": int,
    "max_users": int,
    "zipf_rho": float,
    "horizon": int,
    "replicates": int,
    "w": float,
    "sweep": str,
    "seed": int,
    "full_resolution": bool,
    "dense_until": int,
    "stride": int,
    "workers": int,
    "L": int,
    "gamma": float,
    "epsilon": float,
    "delta_refresh": int,
    "solver": str,
    "skip_blockers": bool,
}
_LISTS = ("size_classes", "sizes", "policies", "sweep_values")
KNOWN_KEYS = tuple(_SCALARS) + _LISTS + ("policy", "policy_params")


def _key_line(text: str | None, key: str) -> int | None:
    if not text:
        return None
    pat = re.compile(rf"^\s*{re.escape(key)}\s*=|^\s*\[+\s*{re.escape(key)}[\].]")
    for i, line in enumerate(text.splitlines(), 1):
        if pat.match(line):
            return i
    return None


def _fail(key: str, msg: str, text: str | None, source: str | None) -> ConfigError:
    where = source or "<config>"
    line = _key_line(text, key.split(".")[0])
    loc = f"{where}:{line}" if line else where
    return ConfigError(f"{loc}: key '{key}': {msg}")


def _coerce(key: str, value, typ, text, source):
    if typ is bool:
        if not isinstance(value, bool):
            raise _fail(key, f"expected true/false, got {value!r}", text, source)
        return value
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise _fail(key, f"expected an integer, got {value!r}", text, source)
        return value
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise _fail(key, f"expected a number, got {value!r}", text, source)
        return float(value)
    if not isinstance(value, str):
        raise _fail(key, f"expected a string, got {value!r}", text, source)
    return value


def config_from_mapping(raw: dict, text: str | None = None, source: str | None = None) -> ExperimentConfig:
    """Validate a parsed config mapping; errors name the offending key."""
    unknown = sorted(set(raw) - set(KNOWN_KEYS))
    if unknown:
        raise _fail(unknown[0], f"unknown key (known keys: {', '.join(KNOWN_KEYS)})", text, source)
    vals: dict[str, Any] = {}
    for key, typ in _SCALARS.items():
        if key in raw:
            vals[key] = _coerce(key, raw[key], typ, text, source)

    kw: dict[str, Any] = {k: vals[k] for k in vals if k not in POLICY_PARAM_KEYS}
    if "size_classes" in raw:
        classes = raw["size_classes"]
        ok = isinstance(classes, list) and classes and all(
            isinstance(c, list) and len(c) == 2 and all(isinstance(x, int) and not isinstance(x, bool) for x in c) for c in classes
        )
        if not ok:
            raise _fail("size_classes", "expected a nonempty list of [size, count] integer pairs", text, source)
        if any(s < 1 or c < 0 for s, c in classes):
            raise _fail("size_classes", "sizes must be >= 1 and counts >= 0", text, source)
        kw["size_classes"] = tuple((int(s), int(c)) for s, c in classes)
    if "sizes" in raw:
        sizes = raw["sizes"]
        if not isinstance(sizes, list) or not sizes or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 1 for s in sizes):
            raise _fail("sizes", "expected a nonempty list of positive integers", text, source)
        kw["sizes"] = tuple(sizes)
    if kw.get("size_layout", DEFAULT_LAYOUT) not in SIZE_LAYOUTS:
        raise _fail("size_layout", f"expected one of {', '.join(SIZE_LAYOUTS)}", text, source)

    for key, low in (("capacity", 1), ("max_users", 1), ("horizon", 0), ("replicates", 1), ("dense_until", 0), ("stride", 1), ("workers", 1)):
        if key in kw and kw[key] < low:
            raise _fail(key, f"must be >= {low}", text, source)
    if kw.get("num_files") is not None and kw["num_files"] < 1:
        raise _fail("num_files", "must be >= 1", text, source)
    if kw.get("zipf_rho", 0.0) < 0:
        raise _fail("zipf_rho", "must be >= 0", text, source)
    if kw.get("w", 1.0) < 0:
        raise _fail("w", "must be >= 0", text, source)
    if kw.get("seed", 0) < 0:
        raise _fail("seed", "must be a nonnegative integer", text, source)

    sweep = kw.get("sweep", "none")
    if sweep not in SWEEP_AXES:
        raise _fail("sweep", f"expected one of {', '.join(SWEEP_AXES)}", text, source)
    values = raw.get("sweep_values", [])
    if not isinstance(values, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
        raise _fail("sweep_values", "expected a list of numbers", text, source)
    if sweep != "none":
        if not values:
            raise _fail("sweep_values", f"sweep '{sweep}' needs a nonempty grid", text, source)
        _check_grid(sweep, values, text, source)
    elif values:
        raise _fail("sweep_values", "given without a sweep axis", text, source)
    kw["sweep_values"] = tuple(float(v) for v in values)

    defaults = {k: vals[k] for k in POLICY_PARAM_KEYS if k in vals}
    overrides = raw.get("policy_params", {})
    if not isinstance(overrides, dict):
        raise _fail("policy_params", "expected a table keyed by policy kind", text, source)
    entries = raw.get("policies", list(DEFAULT_POLICIES))
    if "policy" in raw:
        if "policies" in raw:
            raise _fail("policy", "give either 'policy' or 'policies', not both", text, source)
        entries = [raw["policy"]]
    if not isinstance(entries, list) or not entries:
        raise _fail("policies", "expected a nonempty list", text, source)
    kw["policies"] = tuple(_policy_entry(e, defaults, overrides, text, source) for e in entries)
    labels = [p.label + "/" + p.solver for p in kw["policies"]]
    if len(set(labels)) != len(labels):
        raise _fail("policies", "duplicate policy entries", text, source)
    return ExperimentConfig(**kw)


def _check_grid(sweep, values, text, source):
    for v in values:
        if sweep == "rho" and v < 0:
            raise _fail("sweep_values", "rho values must be >= 0", text, source)
        if sweep == "capacity" and not 0 < v <= 1:
            raise _fail("sweep_values", "capacity values are fractions of the total catalog size in (0, 1]", text, source)
        if sweep == "mean_users" and v < 0.5:
            raise _fail("sweep_values", "mean-users values must be >= 0.5", text, source)
        if sweep == "num_files" and (v < 1 or not float(v).is_integer()):
            raise _fail("sweep_values", "num_files values must be positive integers", text, source)


def _policy_entry(entry, defaults, overrides, text, source) -> PolicySpec:
    if isinstance(entry, str):
        params = {"kind": entry}
    elif isinstance(entry, dict) and "kind" in entry:
        params = dict(entry)
    else:
        raise _fail("policies", f"entry {entry!r} must be a kind string or a table with 'kind'", text, source)
    kind = params["kind"]
    if kind not in POLICY_KINDS:
        raise _fail("policies", f"unknown policy {kind!r}; expected one of {', '.join(POLICY_KINDS)}", text, source)
    merged = dict(defaults)
    extra = overrides.get(kind, {})
    if not isinstance(extra, dict):
        raise _fail(f"policy_params.{kind}", "expected a table", text, source)
    merged.update(extra)
    merged.update({k: v for k, v in params.items() if k != "kind"})
    allowed = set(POLICY_PARAM_KEYS) | {"fixed_files"}
    bad = sorted(set(merged) - allowed)
    if bad:
        raise _fail("policies", f"unknown policy parameter {bad[0]!r} for {kind}", text, source)
    for k in POLICY_PARAM_KEYS:
        if k in merged:
            merged[k] = _coerce(k, merged[k], _SCALARS[k], text, source)
    if "fixed_files" in merged:
        merged["fixed_files"] = tuple(int(f) for f in merged["fixed_files"])
    try:
        return PolicySpec(kind=kind, **merged)
    except ConfigurationError as exc:
        raise _fail("policies", str(exc), text, source) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return parse_config(text, source=str(path))


def parse_config(text: str, source: str | None = None) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source or '<config>'}: {exc}") from None
    return config_from_mapping(raw, text, source)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, dict):
        return "{ " + ", ".join(f"{k} = {_toml_value(x)}" for k, x in v.items()) + " }"
    return "[" + ", ".join(_toml_value(x) for x in v) + "]"


def config_to_toml(cfg: ExperimentConfig) -> str:
    """Serialize a config back to the TOML format :func:`parse_config` reads."""
    base = PolicySpec("cucb")
    lines = ["# cachebandit experiment config"]
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if f.name == "policies":
            entries = []
            for p in v:
                diff = {k: x for k, x in _policy_dict(p).items() if k != "kind" and x != _policy_dict(base)[k]}
                entries.append({"kind": p.kind, **diff} if diff else p.kind)
            lines.append("policies = [\n" + "".join(f"  {_toml_value(e)},\n" for e in entries) + "]")
        elif v is None:
            continue
        else:
            lines.append(f"{f.name} = {_toml_value(v)}")
    return "\n".join(lines) + "\n"


# -- sweep points -----------------------------------------------------------

@dataclass(frozen=True)
class SweepPoint:
    axis: str
    value: float | None
    catalog: Catalog
    profile: PopularityProfile

    @property
    def key(self) -> int:
        return zlib.crc32(f"{self.axis}={self.value!r}".encode())

    @property
    def label(self) -> str:
        return "" if self.value is None else repr(self.value)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _base_sizes(cfg: ExperimentConfig) -> tuple[int, ...]:
    if cfg.sizes is not None:
        sizes = cfg.sizes
    elif cfg.num_files is not None and cfg.num_files != sum(c for _, c in cfg.size_classes):
        sizes = round_robin_sizes(cfg.num_files, [s for s, _ in cfg.size_classes], descending=cfg.size_layout == "round-robin-desc")
    else:
        sizes = sizes_from_classes(cfg.size_classes, cfg.size_layout)
    if cfg.num_files is not None and cfg.num_files != len(sizes):
        raise ConfigError(f"key 'num_files': {cfg.num_files} files but {len(sizes)} sizes given")
    return tuple(sizes)


def sweep_points(cfg: ExperimentConfig) -> list[SweepPoint]:
    """Catalog and profile at every grid value (one point when not sweeping)."""
    sizes = _base_sizes(cfg)
    base = Catalog(sizes, capacity=cfg.capacity, max_users=cfg.max_users)
    if cfg.sweep == "none":
        return [SweepPoint("none", None, base, uniform_users_profile(base, cfg.zipf_rho))]
    points = []
    for v in cfg.sweep_values:
        cat, rho = base, cfg.zipf_rho
        if cfg.sweep == "rho":
            rho = v
        elif cfg.sweep == "capacity":
            cat = replace(base, capacity=max(1, _round_half_up(v * base.total_size)))
        elif cfg.sweep == "mean_users":
            # users uniform on {0..U} have mean U/2
            cat = replace(base, max_users=max(1, _round_half_up(2 * v)))
        elif cfg.sweep == "num_files":
            F = int(v)
            new_sizes = round_robin_sizes(F, sorted(set(sizes)), descending=cfg.size_layout == "round-robin-desc")
            total = sum(new_sizes)
            cat = Catalog(new_sizes, capacity=max(1, _round_half_up(base.relative_capacity * total)), max_users=base.max_users)
        points.append(SweepPoint(cfg.sweep, float(v), cat, uniform_users_profile(cat, rho)))
    return points


# -- seeds and checkpoints --------------------------------------------------

def policy_key(spec: PolicySpec) -> int:
    return zlib.crc32(f"{spec.label}/{spec.solver}/{int(spec.skip_blockers)}/{spec.fixed_files}".encode())


def replicate_seeds(seed: int, point_key: int, spec: PolicySpec, replicate: int):
    """(demand, policy) seed sequences; demand ignores the policy for pairing."""
    demand = np.random.SeedSequence(seed, spawn_key=(0, point_key, replicate))
    policy = np.random.SeedSequence(seed, spawn_key=(1, point_key, policy_key(spec), replicate))
    return demand, policy


def checkpoints(horizon: int, dense_until: int = 1000, stride: int = 10, full: bool = False) -> np.ndarray:
    """Every period up to ``dense_until``, then every ``stride``-th, always ending at ``horizon``."""
    if horizon <= 0:
        return np.zeros(0, dtype=np.int64)
    if full:
        return np.arange(1, horizon + 1, dtype=np.int64)
    dense = np.arange(1, min(dense_until, horizon) + 1, dtype=np.int64)
    sparse = np.arange(dense_until + stride, horizon + 1, stride, dtype=np.int64)
    grid = np.concatenate([dense, sparse])
    if grid.size == 0 or grid[-1] != horizon:
        grid = np.append(grid, horizon)
    return grid


# -- per-point reference values ---------------------------------------------

@dataclass
class PointReference:
    r_opt: float
    alpha_greedy: float
    optimum_source: str
    greedy_reward: float = 0.0
    constants: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)


def point_reference(point: SweepPoint) -> PointReference:
    cat, prof = point.catalog, point.profile
    greedy = expected_reward(solve_greedy(prof.theta, cat), prof.theta, cat)
    try:
        r_opt = expected_reward(solve_exact(prof.theta, cat), prof.theta, cat)
        source = "exact"
    except BudgetExceeded:
        r_opt, source = greedy, "greedy"
    alpha = greedy / r_opt if r_opt > 0 else 1.0
    return PointReference(r_opt=r_opt, alpha_greedy=alpha, optimum_source=source, greedy_reward=greedy)


def policy_alpha(spec: PolicySpec, ref: PointReference) -> float:
    return 1.0 if spec.solver == "exact" else ref.alpha_greedy


def policy_target(spec: PolicySpec, ref: PointReference) -> float:
    """``alpha * r_opt`` for the policy's solver, taken as the solver's own optimum."""
    return ref.r_opt if spec.solver == "exact" else ref.greedy_reward


def policy_schedule(spec: PolicySpec, num_files: int) -> SwitchingSchedule | None:
    if spec.kind == "cucb":
        return SwitchingSchedule.start("every", num_files)
    if spec.kind == "cucbsc-L":
        return SwitchingSchedule.start("constant", num_files, L=spec.L)
    if spec.kind == "cucbsc-sqrt":
        return SwitchingSchedule.start("sqrt", num_files, gamma=spec.gamma)
    return None


def bound_for_policy(point: SweepPoint, spec: PolicySpec, ref: PointReference, w: float):
    """``(constants, evaluator)`` for a policy covered by a closed-form bound.

    Returns ``(None, reason)`` when no bound applies: modified or practical
    policies, catalogs too large to enumerate, constant schedules without the
    exact solver, sqrt schedules with gamma out of range, degenerate
    instances.
    """
    sched = policy_schedule(spec, point.catalog.num_files)
    if sched is None:
        return None, "no closed-form bound for this policy"
    F = point.catalog.num_files
    if F > ENUM_LIMIT:
        return None, f"bound constants need subset enumeration; F={F} > {ENUM_LIMIT}"
    if sched.kind != "sqrt" and spec.solver != "exact":
        return None, "constant-schedule bound assumes the exact solver"
    if sched.kind == "sqrt" and not min_gamma(F) <= spec.gamma <= max_gamma(F):
        return None, f"gamma={spec.gamma} outside [{min_gamma(F):.6g}, {max_gamma(F):.6g}]"
    alpha = policy_alpha(spec, ref)
    try:
        c = compute_bound_constants(point.catalog, point.profile, alpha, sched, enum_limit=ENUM_LIMIT)
    except (BudgetExceeded, DegenerateInstance) as exc:
        return None, str(exc)
    if sched.kind == "sqrt":
        if c.M_u == c.M_l:
            return None, "M_u == M_l: degenerate instance"
        return c, lambda t: theorem1_bound(c, t, w=w, gamma=spec.gamma, beta=1.0)
    return c, lambda t: theorem2_bound(c, t, w=w, L=sched.L if sched.kind == "constant" else 1)


# -- replicate job ----------------------------------------------------------

@dataclass(frozen=True)
class ReplicateJob:
    point: SweepPoint
    spec: PolicySpec
    replicate: int
    seed: int
    horizon: int
    grid: np.ndarray
    target: float
    w: float
    backend: str | None = None
    trace_dir: str | None = None
    fingerprint: str = ""


def run_replicate(job: ReplicateJob) -> dict:
    """One episode reduced to checkpoint series and final totals."""
    cat, prof = job.point.catalog, job.point.profile
    seeds = replicate_seeds(job.seed, job.point.key, job.spec, job.replicate)
    trace = run_episode(cat, prof, job.spec, job.horizon, seed=seeds, backend=job.backend, config_fingerprint=job.fingerprint)
    idx = job.grid - 1
    led = regret_ledger(trace, cat, prof, job.target, alpha=1.0, beta=1.0, w=job.w)
    eff = efficiency_series(trace, job.w)
    bad = np.cumsum(bad_periods(trace, prof, cat, 1.0, job.target))
    if job.trace_dir is not None:
        name = f"{job.point.label or 'base'}_{job.spec.label}_{job.spec.solver}_r{job.replicate}.csv"
        write_trace_csv(trace, Path(job.trace_dir) / re.sub(r"[^\w.,()=+-]", "_", name))
    requested = float(trace.requested.sum())
    return {
        "sampling": led.sampling_regret[idx],
        "switching": led.switching_regret[idx],
        "total": led.total_regret[idx],
        "efficiency": eff[idx],
        "bad": bad[idx].astype(float),
        "final": np.array(
            [
                eff[-1] if len(eff) else np.nan,
                led.sampling_regret[-1] if len(eff) else np.nan,
                led.switching_regret[-1] if len(eff) else np.nan,
                led.total_regret[-1] if len(eff) else np.nan,
                float(trace.reward.sum()),
                float(trace.cost.sum()),
                requested,
            ]
        ),
    }


class RunningMoments:
    """Streaming mean and variance (Welford), ignoring NaN entries."""

    def __init__(self, shape):
        self.n = np.zeros(shape)
        self.mean = np.zeros(shape)
        self.m2 = np.zeros(shape)

    def add(self, x):
        x = np.asarray(x, dtype=float)
        ok = ~np.isnan(x)
        self.n[ok] += 1
        d = x[ok] - self.mean[ok]
        self.mean[ok] += d / self.n[ok]
        self.m2[ok] += d * (x[ok] - self.mean[ok])

    def means(self) -> np.ndarray:
        return np.where(self.n > 0, self.mean, np.nan)

    def standard_errors(self) -> np.ndarray:
        out = np.full(self.n.shape, np.nan)
        ok = self.n > 1
        out[ok] = np.sqrt(self.m2[ok] / (self.n[ok] - 1) / self.n[ok])
        return out


SERIES = ("sampling", "switching", "total", "efficiency", "bad")


@dataclass
class PolicyResult:
    point: SweepPoint
    spec: PolicySpec
    grid: np.ndarray
    moments: dict
    final: RunningMoments
    replicates: int
    alpha: float
    bound: np.ndarray | None
    constants: BoundConstants | None
    bound_note: str


# -- experiment -------------------------------------------------------------

def select_policies(cfg: ExperimentConfig, names: Sequence[str]) -> ExperimentConfig:
    """Keep policies whose kind or label is listed."""
    wanted = [n.strip() for n in names if n.strip()]
    chosen = [p for p in cfg.policies if p.kind in wanted or p.label in wanted]
    missing = [n for n in wanted if not any(n in (p.kind, p.label) for p in cfg.policies)]
    if missing:
        raise ConfigError(f"key 'policies': {missing[0]!r} is not in the config's policy list")
    return replace(cfg, policies=tuple(chosen))


def _jobs(cfg, plan, backend, trace_dir) -> Iterable[ReplicateJob]:
    for point, ref, grid, specs in plan:
        for spec in specs:
            for r in range(cfg.replicates):
                yield ReplicateJob(
                    point=point,
                    spec=spec,
                    replicate=r,
                    seed=cfg.seed,
                    horizon=cfg.horizon,
                    grid=grid,
                    target=policy_target(spec, ref),
                    w=cfg.w,
                    backend=backend,
                    trace_dir=trace_dir,
                    fingerprint=cfg.fingerprint,
                )


def simulate(cfg: ExperimentConfig, backend: str | None = None, trace_dir=None, progress=None) -> tuple[list[PolicyResult], list]:
    """Run every (point, policy, replicate) episode and fold the results."""
    grid = checkpoints(cfg.horizon, cfg.dense_until, cfg.stride, cfg.full_resolution)
    plan = []
    for point in sweep_points(cfg):
        ref = point_reference(point)
        plan.append((point, ref, grid, cfg.policies))
    results: list[PolicyResult] = []
    for point, ref, _, specs in plan:
        for spec in specs:
            c, ev = bound_for_policy(point, spec, ref, cfg.w)
            results.append(
                PolicyResult(
                    point=point,
                    spec=spec,
                    grid=grid,
                    moments={k: RunningMoments(len(grid)) for k in SERIES},
                    final=RunningMoments(7),
                    replicates=cfg.replicates,
                    alpha=policy_alpha(spec, ref),
                    bound=ev(grid.astype(float)) if c is not None and len(grid) else None,
                    constants=c,
                    bound_note="" if c is not None else ev,
                )
            )
    if trace_dir is not None:
        Path(trace_dir).mkdir(parents=True, exist_ok=True)
        trace_dir = str(trace_dir)
    jobs = _jobs(cfg, plan, backend, trace_dir)
    total = len(results) * cfg.replicates
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            outputs = pool.map(run_replicate, jobs, chunksize=max(1, min(16, cfg.replicates // cfg.workers or 1)))
            _fold(results, outputs, cfg.replicates, total, progress)
    else:
        _fold(results, map(run_replicate, jobs), cfg.replicates, total, progress)
    return results, plan


def _fold(results, outputs, R, total, progress):
    # outputs arrive in job order, so the reduction order is fixed
    for i, out in enumerate(outputs):
        res = results[i // R]
        for k in SERIES:
            res.moments[k].add(out[k])
        res.final.add(out["final"])
        if progress is not None:
            progress(i + 1, total)


def _fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def write_outputs(cfg: ExperimentConfig, results: list[PolicyResult], plan, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fp = cfg.fingerprint
    paths = {"aggregate": out / "aggregate.csv", "final": out / "final.csv", "metadata": out / "metadata.json"}
    with open(paths["aggregate"], "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\r\n")
        wr.writerow(AGGREGATE_COLUMNS)
        for res in results:
            m = {k: res.moments[k].means() for k in SERIES}
            se = {k: res.moments[k].standard_errors() for k in SERIES}
            for i, t in enumerate(res.grid):
                wr.writerow(
                    (
                        fp,
                        res.point.axis,
                        res.point.label,
                        res.spec.label,
                        int(t),
                        res.replicates,
                        _fmt(m["sampling"][i]),
                        _fmt(se["sampling"][i]),
                        _fmt(m["switching"][i]),
                        _fmt(se["switching"][i]),
                        _fmt(m["total"][i]),
                        _fmt(se["total"][i]),
                        _fmt(res.bound[i]) if res.bound is not None else "",
                        _fmt(m["efficiency"][i]),
                        _fmt(se["efficiency"][i]),
                        _fmt(m["bad"][i]),
                    )
                )
    with open(paths["final"], "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\r\n")
        wr.writerow(FINAL_COLUMNS)
        for res in results:
            fm, fse = res.final.means(), res.final.standard_errors()
            cat, prof = res.point.catalog, res.point.profile
            ref = next(r for p, r, _, _ in plan if p is res.point)
            wr.writerow(
                (
                    fp,
                    res.point.axis,
                    res.point.label,
                    res.spec.label,
                    res.replicates,
                    cfg.horizon,
                    cat.num_files,
                    cat.capacity,
                    cat.max_users,
                    _fmt(prof.mean_users),
                    _fmt(cat.relative_capacity),
                    _fmt(res.alpha),
                    _fmt(ref.r_opt),
                    _fmt(fm[0]),
                    _fmt(fse[0]),
                    _fmt(fm[1]),
                    _fmt(fm[2]),
                    _fmt(fm[3]),
                    _fmt(res.bound[-1]) if res.bound is not None and len(res.bound) else "",
                    _fmt(fm[4]),
                    _fmt(fm[5]),
                    _fmt(fm[6]),
                )
            )
    meta = experiment_metadata(cfg, results, plan)
    paths["metadata"].write_text(json.dumps(meta, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")
    return paths


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


def _clean(d: dict) -> dict:
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


def experiment_metadata(cfg: ExperimentConfig, results: list[PolicyResult], plan) -> dict:
    points = []
    for point, ref, _, _ in plan:
        cat, prof = point.catalog, point.profile
        pols = []
        for res in results:
            if res.point is not point:
                continue
            pols.append(
                {
                    "policy": res.spec.label,
                    "spec": _policy_dict(res.spec),
                    "alpha": res.alpha,
                    "beta": 1.0,
                    "bound_constants": _clean(res.constants.as_dict()) if res.constants is not None else None,
                    "bound_note": res.bound_note,
                }
            )
        points.append(
            {
                "sweep": point.axis,
                "sweep_value": point.value,
                "num_files": cat.num_files,
                "capacity": cat.capacity,
                "total_size": cat.total_size,
                "relative_capacity": cat.relative_capacity,
                "max_users": cat.max_users,
                "mean_users": prof.mean_users,
                "zipf_rho": prof.rho,
                "r_opt": ref.r_opt,
                "optimum_source": ref.optimum_source,
                "alpha_greedy": ref.alpha_greedy,
                "policies": pols,
            }
        )
    return {
        "config_fingerprint": cfg.fingerprint,
        "config": cfg.to_dict(),
        "version": __version__,
        "checkpoints": {
            "full_resolution": cfg.full_resolution,
            "dense_until": cfg.dense_until,
            "stride": cfg.stride,
            "count": int(len(results[0].grid)) if results else 0,
        },
        "aggregation": "mean over replicates with standard-error columns (sample sd / sqrt(R))",
        "regret_reward": "expected reward of the held cache under the true popularity",
        "seed_scheme": (
            "demand: SeedSequence(seed, spawn_key=(0, crc32(point), replicate)); "
            "policy: SeedSequence(seed, spawn_key=(1, crc32(point), crc32(policy), replicate))"
        ),
        "random_cache_law": "uniform random permutation of candidate files, added in order until the first one that does not fit",
        "mean_users_source": "true mean user count of the demand model (U/2), not an estimate",
        "user_count_law": "uniform on the integers 0..U",
        "points": points,
    }


def run_experiment(cfg: ExperimentConfig, out_dir, backend: str | None = None, traces: bool = False, progress=None) -> dict[str, Path]:
    """Simulate and write ``aggregate.csv``, ``final.csv`` and ``metadata.json``."""
    trace_dir = Path(out_dir) / "traces" if traces else None
    results, plan = simulate(cfg, backend=backend or DEFAULT_BACKEND, trace_dir=trace_dir, progress=progress)
    return write_outputs(cfg, results, plan, out_dir)


# -- bounds only ------------------------------------------------------------

BOUND_COLUMNS = ("config_fingerprint", "sweep", "sweep_value", "policy", "t", "theorem_bound", "bad_period_bound")


def evaluate_bounds(cfg: ExperimentConfig, t_max: int, out_dir=None) -> dict:
    """Bound constants and bound curves for every bound-covered policy."""
    grid = checkpoints(t_max, cfg.dense_until, cfg.stride, cfg.full_resolution)
    rows, entries = [], []
    for point in sweep_points(cfg):
        if point.catalog.num_files > ENUM_LIMIT:
            raise ConfigError(f"key 'num_files': bound evaluation needs F <= {ENUM_LIMIT}, got {point.catalog.num_files}")
        ref = point_reference(point)
        for spec in cfg.policies:
            c, ev = bound_for_policy(point, spec, ref, cfg.w)
            if c is None:
                entries.append({"sweep_value": point.value, "policy": spec.label, "constants": None, "note": ev})
                continue
            sched = policy_schedule(spec, point.catalog.num_files)
            tb = ev(grid.astype(float))
            bb = bad_period_bound(c, sched, grid, beta=1.0)
            entries.append({"sweep_value": point.value, "policy": spec.label, "constants": _clean(c.as_dict()), "note": ""})
            for i, t in enumerate(grid):
                rows.append((cfg.fingerprint, point.axis, point.label, spec.label, int(t), _fmt(tb[i]), _fmt(bb[i])))
    result = {"config_fingerprint": cfg.fingerprint, "t_max": t_max, "bounds": entries}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "bounds.csv", "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\r\n")
            wr.writerow(BOUND_COLUMNS)
            wr.writerows(rows)
        (out / "bounds.json").write_text(json.dumps(result, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")
    result["rows"] = rows
    return result
