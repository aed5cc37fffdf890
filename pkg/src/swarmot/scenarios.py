"""Seeded scenario generation and the paired Monte Carlo benchmark harness.

Randomness is drawn from the counter-based Philox 4x64 generator keyed by
the scenario seed, and per-run seeds are derived from the master seed with
a splitmix64 finalizer, so scenarios are reproducible across platforms and
processes.
"""

from __future__ import annotations

import csv
import json
import time as _time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import (
    IntegratorConfig,
    closed_loop_target,
    double_integrator_3d,
    quadcopter_linearized,
)
from .engine import (
    EngagementConfig,
    SwarmState,
    run_dynamics_policy,
    run_emd_policy,
)
from .errors import InvalidParameter, SwarmotError
from .riccati import synthesize_tracker
from .systems import LinearSystem, QuadraticCost

WORLDS = ("double_integrator_3d", "quadcopter")

# splitmix64 constants (Steele, Lea & Flood's SplittableRandom finalizer)
_SM64_GAMMA = 0x9E3779B97F4A7C15
_SM64_M1 = 0xBF58476D1CE4E5B9
_SM64_M2 = 0x94D049BB133111EB
_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x &= _MASK64
    x ^= x >> 30
    x = (x * _SM64_M1) & _MASK64
    x ^= x >> 27
    x = (x * _SM64_M2) & _MASK64
    x ^= x >> 31
    return x


def derive_run_seed(master_seed: int, k: int) -> int:
    """Seed of run k: splitmix64 finalizer over master + (k+1) * gamma."""
    return splitmix64((master_seed + (k + 1) * _SM64_GAMMA) & _MASK64)


_DI_BOUNDS = {
    "agent_position": (-1000.0, 1000.0),
    "agent_velocity": (-5000.0, 5000.0),
    "target_position": (-1000.0, 1000.0),
    "target_velocity": (-1000.0, 1000.0),
    "terminal_location": (-1000.0, 1000.0),
}
_QUAD_BOUNDS = {
    "agent_position": (-100.0, 100.0),
    "agent_velocity": (-500.0, 500.0),
    "target_position": (-100.0, 100.0),
    "target_velocity": (-50.0, 50.0),
    "attitude": (-2.0 * np.pi, 2.0 * np.pi),
    "rates": (-25.0, 25.0),
    "terminal_location": (-100.0, 100.0),
}


def default_bounds(world: str) -> dict:
    if world == "double_integrator_3d":
        return dict(_DI_BOUNDS)
    if world == "quadcopter":
        return dict(_QUAD_BOUNDS)
    raise InvalidParameter(f"unknown world {world!r}")


def default_cost(world: str) -> QuadraticCost:
    if world == "double_integrator_3d":
        return QuadraticCost(np.diag([1000.0] * 3 + [0.0] * 3), np.eye(3))
    if world == "quadcopter":
        return QuadraticCost(np.diag([1000.0] * 6 + [0.0] * 6), np.eye(4))
    raise InvalidParameter(f"unknown world {world!r}")


def default_engagement(world: str) -> EngagementConfig:
    """Capture radius ~0.1% of the arena scale; horizons sized to complete."""
    if world == "double_integrator_3d":
        return EngagementConfig(capture_radius=1.0, horizon=10.0)
    if world == "quadcopter":
        return EngagementConfig(capture_radius=0.5, horizon=5.0)
    raise InvalidParameter(f"unknown world {world!r}")


@dataclass(frozen=True)
class ScenarioSpec:
    world: str = "double_integrator_3d"
    n: int = 5
    seed: int = 0
    bounds: dict = None
    cost_weights: QuadraticCost = None

    def __post_init__(self):
        if self.world not in WORLDS:
            raise InvalidParameter(f"unknown world {self.world!r}")
        if self.n < 1:
            raise InvalidParameter("swarm size must be >= 1")
        bounds = dict(default_bounds(self.world))
        if self.bounds:
            bounds.update(self.bounds)
        for name, (lo, hi) in bounds.items():
            if not lo < hi:
                raise InvalidParameter(f"bounds for {name} must satisfy low < high")
        object.__setattr__(self, "bounds", bounds)
        if self.cost_weights is None:
            object.__setattr__(self, "cost_weights", default_cost(self.world))


@dataclass(frozen=True)
class Scenario:
    """A fully built engagement: initial states plus the target systems."""

    spec: ScenarioSpec
    swarm: SwarmState
    agent_system: LinearSystem
    target_systems: list[LinearSystem]
    references: np.ndarray  # (n, d) full-state terminal references


def _plant(world: str) -> LinearSystem:
    if world == "double_integrator_3d":
        return double_integrator_3d()
    return quadcopter_linearized()


def _sample_states(rng, n, bounds, layout, velocity_key):
    d = layout.dim
    out = np.zeros((n, d))
    lo, hi = layout.slices["position"]
    out[:, lo:hi] = rng.uniform(*bounds["target_position" if "target" in velocity_key
                                        else "agent_position"], (n, hi - lo))
    if "attitude" in layout.slices:
        lo, hi = layout.slices["attitude"]
        out[:, lo:hi] = rng.uniform(*bounds["attitude"], (n, hi - lo))
    lo, hi = layout.slices["velocity"]
    out[:, lo:hi] = rng.uniform(*bounds[velocity_key], (n, hi - lo))
    if "rates" in layout.slices:
        lo, hi = layout.slices["rates"]
        out[:, lo:hi] = rng.uniform(*bounds["rates"], (n, hi - lo))
    return out


def generate(spec: ScenarioSpec) -> Scenario:
    """Sample initial conditions and build the closed-loop target systems.

    Draw order (fixed for reproducibility): agent states, target states,
    terminal locations, then the target-to-location bijection.
    """
    rng = np.random.Generator(np.random.Philox(key=spec.seed))
    plant = _plant(spec.world)
    layout = plant.layout
    n = spec.n

    agents = _sample_states(rng, n, spec.bounds, layout, "agent_velocity")
    targets = _sample_states(rng, n, spec.bounds, layout, "target_velocity")
    lo, hi = layout.slices["position"]
    locations = rng.uniform(*spec.bounds["terminal_location"], (n, hi - lo))
    perm = rng.permutation(n)

    references = np.zeros((n, layout.dim))
    references[:, lo:hi] = locations[perm]

    # targets run the same tracking law toward their fixed reference
    static = LinearSystem(
        np.zeros((layout.dim, layout.dim)),
        np.zeros((layout.dim, 0)),
        np.zeros(layout.dim),
        layout=layout,
    )
    ref_policy = synthesize_tracker(plant, static, spec.cost_weights)
    target_systems = [
        closed_loop_target(plant, ref_policy, references[j]) for j in range(n)
    ]
    swarm = SwarmState.initial(agents, targets)
    return Scenario(spec, swarm, plant, target_systems, references)


# ---------------------------------------------------------------------------
# Monte Carlo harness


@dataclass
class RunRecord:
    index: int
    seed: int
    j_dyn: float = np.nan
    j_emd: float = np.nan
    optimal_cost: float = np.nan
    switch_total: int = 0
    dyn_assignments: int = 0
    emd_assignments: int = 0
    dyn_status: str = ""
    emd_status: str = ""
    runtime_dyn: float = np.nan
    runtime_emd: float = np.nan
    ok: bool = False
    failure_reason: str = ""

    @property
    def gap(self) -> float:
        return self.j_emd - self.j_dyn


@dataclass
class MonteCarloReport:
    spec: ScenarioSpec
    engagement: EngagementConfig
    runs: list
    aggregates: dict
    histogram_edges: np.ndarray
    histogram_counts: np.ndarray

    def recompute_aggregates(self) -> dict:
        return _aggregate([r for r in self.runs])


def _aggregate(runs) -> dict:
    done = [r for r in runs if r.ok]
    gaps = np.array([r.gap for r in done]) if done else np.array([])
    switches = np.array([r.switch_total for r in done]) if done else np.array([])
    agg = {
        "runs": len(runs),
        "completed": len(done),
        "failed": len(runs) - len(done),
        "reliable": len(done) >= 0.95 * len(runs) if runs else False,
        "mean_gap": float(gaps.mean()) if done else None,
        "std_gap": float(gaps.std(ddof=1)) if len(done) > 1 else None,
        "mean_j_dyn": float(np.mean([r.j_dyn for r in done])) if done else None,
        "mean_j_emd": float(np.mean([r.j_emd for r in done])) if done else None,
        "mean_switches": float(switches.mean()) if done else None,
    }
    return agg


def run_engagement_pair(scenario: Scenario, engagement: EngagementConfig):
    """Run both policies from the identical initial swarm state."""
    t0 = _time.perf_counter()
    dyn = run_dynamics_policy(
        scenario.swarm, scenario.agent_system, scenario.target_systems,
        scenario.spec.cost_weights, replace(engagement, metric="dynamics"),
    )
    t1 = _time.perf_counter()
    emd = run_emd_policy(
        scenario.swarm, scenario.agent_system, scenario.target_systems,
        scenario.spec.cost_weights, replace(engagement, metric="euclidean"),
    )
    t2 = _time.perf_counter()
    return dyn, emd, t1 - t0, t2 - t1


def _run_one(args) -> RunRecord:
    spec, engagement, k = args
    seed = derive_run_seed(spec.seed, k)
    rec = RunRecord(index=k, seed=seed)
    try:
        scenario = generate(replace(spec, seed=seed))
        dyn, emd, rt_d, rt_e = run_engagement_pair(scenario, engagement)
    except SwarmotError as exc:
        rec.failure_reason = f"{type(exc).__name__}: {exc}"
        return rec
    rec.j_dyn = dyn.total_cost
    rec.j_emd = emd.total_cost
    rec.optimal_cost = dyn.optimal_cost
    rec.switch_total = int(emd.switch_count.sum())
    rec.dyn_assignments = len(dyn.assignment_history)
    rec.emd_assignments = len(emd.assignment_history)
    rec.dyn_status = dyn.terminal_status
    rec.emd_status = emd.terminal_status
    rec.runtime_dyn = rt_d
    rec.runtime_emd = rt_e
    rec.ok = (dyn.terminal_status == "captured"
              and emd.terminal_status == "captured")
    if not rec.ok:
        rec.failure_reason = "incomplete captures within horizon"
    return rec


def monte_carlo(
    spec: ScenarioSpec,
    runs: int,
    engagement: EngagementConfig | None = None,
    jobs: int = 1,
) -> MonteCarloReport:
    """Paired dynamics-vs-EMD benchmark over derived seeds.

    Each run builds one scenario and feeds the identical initial state to
    both policies.  Failed runs are recorded with their reason and excluded
    from the aggregates; results are reduced in run-index order regardless
    of completion order.
    """
    if runs < 1:
        raise InvalidParameter("runs must be >= 1")
    engagement = engagement or default_engagement(spec.world)
    work = [(spec, engagement, k) for k in range(runs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_run_one, work))
    else:
        records = [_run_one(w) for w in work]
    records.sort(key=lambda r: r.index)
    agg = _aggregate(records)
    done_gaps = np.array([r.gap for r in records if r.ok])
    if done_gaps.size:
        counts, edges = np.histogram(done_gaps, bins=10)
    else:
        counts, edges = np.zeros(10, dtype=int), np.linspace(0, 1, 11)
    return MonteCarloReport(
        spec=spec, engagement=engagement, runs=records, aggregates=agg,
        histogram_edges=edges, histogram_counts=counts,
    )


# ---------------------------------------------------------------------------
# report serialization


def _spec_dict(spec: ScenarioSpec) -> dict:
    return {
        "world": spec.world,
        "n": spec.n,
        "seed": spec.seed,
        "bounds": {k: list(v) for k, v in sorted(spec.bounds.items())},
        "state_weight_diag": [float(v) for v in
                              np.diag(spec.cost_weights.state_weight)],
        "control_weight_diag": [float(v) for v in
                                np.diag(spec.cost_weights.control_weight)],
    }


def _engagement_dict(cfg: EngagementConfig) -> dict:
    return {
        "capture_radius": cfg.capture_radius,
        "horizon": cfg.horizon,
        "reassign_interval": cfg.reassign_interval,
        "rel_tol": cfg.integrator.rel_tol,
        "abs_tol": cfg.integrator.abs_tol,
        "output_dt": cfg.integrator.output_dt,
        "euclidean_exponent": cfg.euclidean_exponent,
    }


def _run_row(r: RunRecord, with_timings: bool) -> dict:
    row = {
        "index": r.index,
        "seed": r.seed,
        "j_dyn": r.j_dyn,
        "j_emd": r.j_emd,
        "gap": r.gap,
        "optimal_cost": r.optimal_cost,
        "switch_total": r.switch_total,
        "dyn_assignments": r.dyn_assignments,
        "emd_assignments": r.emd_assignments,
        "dyn_status": r.dyn_status,
        "emd_status": r.emd_status,
        "ok": r.ok,
        "failure_reason": r.failure_reason,
    }
    if with_timings:
        row["runtime_dyn"] = r.runtime_dyn
        row["runtime_emd"] = r.runtime_emd
    return row


def report_to_json(report: MonteCarloReport, path):
    """Deterministic report artifact (wall-clock timings are kept out; see
    write_timings)."""
    payload = {
        "scenario": _spec_dict(report.spec),
        "engagement": _engagement_dict(report.engagement),
        "runs": [_run_row(r, with_timings=False) for r in report.runs],
        "aggregates": report.aggregates,
        "histogram": {
            "edges": [float(e) for e in report.histogram_edges],
            "counts": [int(c) for c in report.histogram_counts],
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def report_to_csv(report: MonteCarloReport, path):
    fields = ["index", "seed", "j_dyn", "j_emd", "gap", "optimal_cost",
              "switch_total", "dyn_assignments", "emd_assignments",
              "dyn_status", "emd_status", "ok", "failure_reason"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for r in report.runs:
            row = _run_row(r, with_timings=False)
            row = {k: (repr(v) if isinstance(v, float) else v)
                   for k, v in row.items()}
            writer.writerow(row)


def write_timings(report: MonteCarloReport, path):
    """Wall-clock timings; inherently non-reproducible, hence a separate file."""
    payload = {
        "runs": [
            {"index": r.index, "runtime_dyn": r.runtime_dyn,
             "runtime_emd": r.runtime_emd}
            for r in report.runs
        ]
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
