"""Monte-Carlo sweeps of minimum transmit power over fronthaul capacity or cache size.

Each drop draws one topology, channel and request profile from a per-drop
seed; every caching strategy and grid value at that drop reuses those draws,
so strategy comparisons are paired.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .dual import DualProblem, DualResult, ellipsoid_solve
from .model import SystemConfig, check_feasibility
from .recovery import RecoveryResult, recover
from .scenario import (
    STRATEGIES, ChannelConfig, GeometryConfig, Scenario, config_to_dict, derive_seed,
    generate_scenario, noise_power,
)

SWEPT_PARAMS = ("fronthaul_capacity", "cache_size")
CSV_COLUMNS = ("strategy", "swept_param", "value", "mean_power_W", "stderr_W", "n_feasible", "n_drops", "mean_gap")
RESULT_FORMAT = "cachecran-sweep"


@dataclass(frozen=True)
class SolverSettings:
    mode: str = "exhaustive"
    tol: float = 1e-4
    radius: float = 1e3
    max_iter: Optional[int] = None


@dataclass
class Solved:
    dual: DualResult
    recovery: RecoveryResult

    @property
    def gap(self) -> float:
        """Relative primal-dual gap ``(P - g) / P`` (nan if infeasible)."""
        if not self.recovery.feasible:
            return math.nan
        p = self.recovery.power
        return (p - self.dual.g) / p if p > 0 else 0.0


def solve_scenario(sc: Scenario, settings: SolverSettings = SolverSettings()) -> Solved:
    """Dual solve followed by primal recovery on one instance."""
    pb = DualProblem(sc.channel, sc.content, sc.config)
    res = ellipsoid_solve(sc.channel, sc.content, sc.config, mode=settings.mode, radius=settings.radius,
                          tol=settings.tol, max_iter=settings.max_iter, problem=pb)
    rec = recover(res, sc.channel, sc.content, sc.config, mode=settings.mode, problem=pb)
    return Solved(res, rec)


@dataclass(frozen=True)
class SweepSpec:
    swept_param: str
    values: Tuple[float, ...]
    template: SystemConfig
    strategies: Tuple[str, ...] = STRATEGIES
    num_drops: int = 20
    seed: int = 0
    solver: SolverSettings = SolverSettings()
    zipf_exponent: float = 0.9
    geometry: GeometryConfig = GeometryConfig()
    channel: ChannelConfig = ChannelConfig()

    def __post_init__(self):
        if self.swept_param not in SWEPT_PARAMS:
            raise ValueError(f"swept_param must be one of {SWEPT_PARAMS}")
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValueError("value grid is empty")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("value grid must be strictly increasing")
        if self.swept_param == "cache_size" and any(v != int(v) or v < 0 for v in vals):
            raise ValueError("cache sizes must be nonnegative integers")
        object.__setattr__(self, "values", vals)
        strategies = tuple(self.strategies)
        if not strategies:
            raise ValueError("at least one caching strategy is required")
        bad = [s for s in strategies if s not in STRATEGIES]
        if bad:
            raise ValueError(f"unknown strategies {bad}; expected a subset of {STRATEGIES}")
        object.__setattr__(self, "strategies", strategies)
        if int(self.num_drops) < 1:
            raise ValueError("num_drops must be at least 1")
        for v in vals:
            self.config_at(v)  # validate every grid point up front

    def config_at(self, value: float) -> SystemConfig:
        if self.swept_param == "fronthaul_capacity":
            return self.template.replace(fronthaul_capacity=value)
        return self.template.replace(cache_size=int(value))


@dataclass(frozen=True)
class DropRecord:
    drop: int
    strategy: str
    value: float
    seed: int
    feasible: bool
    power: Optional[float]  # total W, unnormalised; None if infeasible
    dual_bound: float
    gap: Optional[float]
    converged: bool
    iterations: int
    reason: str = ""


def run_drop(drop: int, strategy: str, value: float, spec: SweepSpec) -> DropRecord:
    cfg = spec.config_at(value)
    seed = derive_seed(spec.seed, drop)
    sc = generate_scenario(cfg, seed, strategy, spec.zipf_exponent, spec.geometry, spec.channel)
    out = solve_scenario(sc, spec.solver)
    rec = out.recovery
    if rec.feasible:
        total = check_feasibility(rec.allocation, sc.content, sc.channel, cfg).total_power
        return DropRecord(drop, strategy, float(value), seed, True, float(total), out.dual.g, out.gap,
                          out.dual.converged, out.dual.iterations)
    return DropRecord(drop, strategy, float(value), seed, False, None, out.dual.g, None,
                      out.dual.converged, out.dual.iterations, rec.reason)


def _run_task(args):
    return run_drop(*args)


@dataclass(frozen=True)
class PointSummary:
    strategy: str
    value: float
    mean_power_W: float  # normalised by the number of RRHs
    stderr_W: float
    n_feasible: int
    n_drops: int
    mean_gap: float


@dataclass
class SweepResult:
    spec: SweepSpec
    records: List[DropRecord] = field(default_factory=list)

    def point(self, strategy: str, value: float) -> List[DropRecord]:
        return [r for r in self.records if r.strategy == strategy and r.value == value]

    def summary(self) -> List[PointSummary]:
        """Per (strategy, grid value) statistics over feasible drops, in grid order."""
        M = self.spec.template.num_rrhs
        rows = []
        for strategy in self.spec.strategies:
            for value in self.spec.values:
                recs = self.point(strategy, value)
                if not recs:
                    continue
                p = [r.power / M for r in recs if r.feasible]
                gaps = [r.gap for r in recs if r.feasible]
                n = len(p)
                mean = math.fsum(p) / n if n else math.nan
                if n > 1:
                    var = math.fsum((x - mean) ** 2 for x in p) / (n - 1)
                    se = math.sqrt(var / n)
                else:
                    se = math.nan
                gap = math.fsum(gaps) / n if n else math.nan
                rows.append(PointSummary(strategy, value, mean, se, n, len(recs), gap))
        return rows

    def paired_powers(self, strategy: str) -> np.ndarray:
        """``(num_drops, num_values)`` total powers, ``nan`` where infeasible."""
        out = np.full((self.spec.num_drops, len(self.spec.values)), np.nan)
        col = {v: j for j, v in enumerate(self.spec.values)}
        for r in self.records:
            if r.strategy == strategy and r.feasible:
                out[r.drop, col[r.value]] = r.power
        return out


def run_sweep(spec: SweepSpec, threads: int = 1) -> SweepResult:
    """Every (grid value, strategy, drop) combination; records come back in
    that nested order whatever the degree of parallelism."""
    tasks = [(d, s, v, spec) for v in spec.values for s in spec.strategies for d in range(spec.num_drops)]
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            records = list(ex.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
    else:
        records = [_run_task(t) for t in tasks]
    return SweepResult(spec, records)


# -- emission ---------------------------------------------------------------

def _num(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


def emit_results(result: SweepResult, fmt: str = "csv") -> bytes:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in result.summary():
            w.writerow([row.strategy, result.spec.swept_param, repr(row.value), repr(row.mean_power_W),
                        repr(row.stderr_W), row.n_feasible, row.n_drops, repr(row.mean_gap)])
        return buf.getvalue().encode()
    if fmt == "structured":
        doc = {
            "format": RESULT_FORMAT,
            "version": 1,
            "spec": spec_to_dict(result.spec),
            "records": [{k: _num(v) for k, v in asdict(r).items()} for r in result.records],
        }
        return (json.dumps(doc, sort_keys=True, indent=1) + "\n").encode()
    raise ValueError("format must be 'csv' or 'structured'")


def spec_to_dict(spec: SweepSpec) -> dict:
    return {
        "swept_param": spec.swept_param,
        "values": list(spec.values),
        "template": config_to_dict(spec.template),
        "strategies": list(spec.strategies),
        "num_drops": spec.num_drops,
        "seed": spec.seed,
        "solver": asdict(spec.solver),
        "zipf_exponent": spec.zipf_exponent,
        "geometry": asdict(spec.geometry),
        "channel": asdict(spec.channel),
    }


def spec_from_dict(d: dict) -> SweepSpec:
    geom = dict(d["geometry"])
    if geom.get("rrh_positions") is not None:
        geom["rrh_positions"] = tuple(map(tuple, geom["rrh_positions"]))
    return SweepSpec(
        d["swept_param"], tuple(d["values"]), SystemConfig(**d["template"]), tuple(d["strategies"]),
        int(d["num_drops"]), int(d["seed"]), SolverSettings(**d["solver"]), float(d["zipf_exponent"]),
        GeometryConfig(**geom), ChannelConfig(**d["channel"]),
    )


def load_results(data) -> SweepResult:
    doc = json.loads(data)
    if doc.get("format") != RESULT_FORMAT:
        raise ValueError("not a cachecran sweep document")
    records = [DropRecord(**r) for r in doc["records"]]
    return SweepResult(spec_from_dict(doc["spec"]), records)


# -- presets ----------------------------------------------------------------

def desk_template(**changes) -> SystemConfig:
    """M=3, K=4, N=16, F=10 at 20 MHz, 20 Mbps per user, S=2."""
    base = dict(num_rrhs=3, num_users=4, num_subchannels=16, num_contents=10, bandwidth=20e6,
                noise_power=noise_power(20e6, 16), fronthaul_capacity=40e6, min_rate=20e6, cache_size=2)
    base.update(changes)
    return SystemConfig(**base)


def full_template(**changes) -> SystemConfig:
    """M=5, K=10, N=64, F=50 at 20 MHz, 20 Mbps per user, S=5, Rbar=80 Mbps."""
    base = dict(num_rrhs=5, num_users=10, num_subchannels=64, num_contents=50, bandwidth=20e6,
                noise_power=noise_power(20e6, 64), fronthaul_capacity=80e6, min_rate=20e6, cache_size=5)
    base.update(changes)
    return SystemConfig(**base)


DESK_FRONTHAUL_GRID = (30e6, 35e6, 40e6, 50e6, 60e6)
DESK_CACHE_GRID = (0, 1, 2, 3, 4)
FULL_FRONTHAUL_GRID = (40e6, 60e6, 80e6, 100e6, 120e6)
FULL_CACHE_GRID = (0, 1, 2, 3, 4, 5, 6, 8, 10)


def preset(name: str, swept_param: str, **overrides) -> SweepSpec:
    """``desk`` or ``full`` sweep over ``fronthaul_capacity`` or ``cache_size``."""
    if name == "desk":
        template = desk_template(fronthaul_capacity=30e6) if swept_param == "cache_size" else desk_template()
        grid = DESK_FRONTHAUL_GRID if swept_param == "fronthaul_capacity" else DESK_CACHE_GRID
        solver = SolverSettings("exhaustive")
    elif name == "full":
        template = full_template()
        grid = FULL_FRONTHAUL_GRID if swept_param == "fronthaul_capacity" else FULL_CACHE_GRID
        solver = SolverSettings("greedy")
    else:
        raise ValueError("preset must be 'desk' or 'full'")
    spec = SweepSpec(swept_param, grid, template, solver=solver)
    return replace(spec, **overrides) if overrides else spec
