"""Command-line front end: single runs, Monte Carlo sweeps, and self-checks.

Configuration precedence is flags > config file > defaults; every field
that fell back to a default is listed in the emitted summary.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import scenarios as sc
from .dynamics import IntegratorConfig, double_integrator_3d
from .engine import (
    EngagementConfig,
    assign,
    swarm_at,
    write_trace_csv,
    write_trace_json,
)
from .errors import SwarmotError
from .riccati import care_residual, solve_care
from .systems import QuadraticCost
from .transport import CostMatrix, solve_matching

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_VERIFY = 3


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    with open(p) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError("config file must contain a mapping")
    return data


_SCENARIO_FIELDS = {"world": "double_integrator_3d", "n": 5, "seed": 0}
_ENGAGEMENT_FIELDS = {
    "capture_radius": None,  # world-dependent default
    "horizon": None,
    "reassign_interval": 0.1,
    "rel_tol": 1e-6,
    "abs_tol": 1e-8,
    "output_dt": 0.01,
    "euclidean_exponent": 1.0,
}
_RUN_FIELDS = {"policy": "both", "output_dir": "out", "emit": None}


def _resolve(args, file_cfg: dict):
    """Merge flags > file > defaults; track which fields were defaulted."""
    resolved = {}
    defaulted = []
    flag_map = {
        "world": args.world, "n": args.n, "seed": args.seed,
        "capture_radius": args.capture_radius, "horizon": args.horizon,
        "reassign_interval": args.reassign_interval,
        "euclidean_exponent": getattr(args, "metric_exponent", None),
        "policy": getattr(args, "policy", None),
        "output_dir": args.output_dir,
        "rel_tol": None, "abs_tol": None, "output_dt": None, "emit": None,
    }
    scn = file_cfg.get("scenario", {})
    eng = file_cfg.get("engagement", {})
    run = file_cfg.get("run", {})
    for section, fields in (
        (scn, _SCENARIO_FIELDS), (eng, _ENGAGEMENT_FIELDS), (run, _RUN_FIELDS)
    ):
        for name, default in fields.items():
            if flag_map.get(name) is not None:
                resolved[name] = flag_map[name]
            elif name in section:
                resolved[name] = section[name]
            else:
                resolved[name] = default
                defaulted.append(name)
    world = resolved["world"]
    world_default = sc.default_engagement(world)
    if resolved["capture_radius"] is None:
        resolved["capture_radius"] = world_default.capture_radius
    if resolved["horizon"] is None:
        resolved["horizon"] = world_default.horizon
    if resolved["emit"] is None:
        resolved["emit"] = ["trace", "summary", "cumulative_cost"]
    return resolved, sorted(defaulted)


def _build(resolved):
    spec = sc.ScenarioSpec(
        world=resolved["world"], n=int(resolved["n"]),
        seed=int(resolved["seed"]),
    )
    engagement = EngagementConfig(
        capture_radius=float(resolved["capture_radius"]),
        horizon=float(resolved["horizon"]),
        reassign_interval=float(resolved["reassign_interval"]),
        integrator=IntegratorConfig(
            rel_tol=float(resolved["rel_tol"]),
            abs_tol=float(resolved["abs_tol"]),
            output_dt=float(resolved["output_dt"]),
        ),
        euclidean_exponent=float(resolved["euclidean_exponent"]),
    )
    return spec, engagement


def _write_cumulative(path, traces: dict, optimal: float):
    """Plot-ready series: per-policy cumulative cost over time, normalized
    by the dynamics-assignment optimum."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["policy", "time", "normalized_cumulative_cost"])
        for name, trace in traces.items():
            series = trace.cumulative_total() / optimal
            for t, v in zip(trace.times, series):
                writer.writerow([name, repr(float(t)), repr(float(v))])


def cmd_run(args) -> int:
    try:
        file_cfg = _load_config(args.config)
        resolved, defaulted = _resolve(args, file_cfg)
        spec, engagement = _build(resolved)
        policy = resolved["policy"]
        if policy not in ("dyn", "emd", "both"):
            raise ValueError(f"invalid field 'policy': {policy!r}")
    except (FileNotFoundError, ValueError, KeyError, SwarmotError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    outdir = Path(resolved["output_dir"])
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        scenario = sc.generate(spec)
        traces = {}
        if policy in ("dyn", "both"):
            traces["dyn"] = sc.run_dynamics_policy(
                scenario.swarm, scenario.agent_system, scenario.target_systems,
                spec.cost_weights, replace(engagement, metric="dynamics"),
            )
        if policy in ("emd", "both"):
            traces["emd"] = sc.run_emd_policy(
                scenario.swarm, scenario.agent_system, scenario.target_systems,
                spec.cost_weights, replace(engagement, metric="euclidean"),
            )
    except SwarmotError as exc:
        summary = {"status": "failed", "reason": f"{type(exc).__name__}: {exc}"}
        with open(outdir / "summary.json", "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    emit = set(resolved["emit"])
    config_echo = {k: resolved[k] for k in sorted(resolved)}
    if "trace" in emit:
        for name, trace in traces.items():
            write_trace_csv(trace, outdir / f"trace_{name}.csv")
            write_trace_json(
                trace, outdir / f"trace_{name}.json", seed=spec.seed,
                extra={"resolved_config": config_echo},
            )
    if "cumulative_cost" in emit and traces:
        optimal = next(iter(traces.values())).optimal_cost
        _write_cumulative(outdir / "cumulative_cost.csv", traces, optimal)
    if "summary" in emit:
        summary = {
            "status": "ok",
            "resolved_config": config_echo,
            "defaulted_fields": defaulted,
            "seed": spec.seed,
            "results": {
                name: {
                    "total_cost": t.total_cost,
                    "optimal_cost": t.optimal_cost,
                    "terminal_status": t.terminal_status,
                    "switch_total": int(t.switch_count.sum()),
                    "assignments": len(t.assignment_history),
                }
                for name, t in traces.items()
            },
        }
        with open(outdir / "summary.json", "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    if args.json:
        print(json.dumps({"status": "ok", "output_dir": str(outdir)},
                         sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    try:
        file_cfg = _load_config(args.config)
        resolved, defaulted = _resolve(args, file_cfg)
        spec, engagement = _build(resolved)
        sizes = [int(s) for s in args.sizes.split(",")] if args.sizes else [5, 10, 20]
        if not sizes or args.runs < 1:
            raise ValueError("invalid field 'sizes'/'runs': need sizes and runs >= 1")
    except (FileNotFoundError, ValueError, KeyError, SwarmotError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    outdir = Path(resolved["output_dir"])
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        summary_rows = []
        for n in sizes:
            report = sc.monte_carlo(
                replace(spec, n=n), args.runs, engagement, jobs=args.jobs
            )
            sc.report_to_json(report, outdir / f"report_n{n}.json")
            sc.report_to_csv(report, outdir / f"report_n{n}.csv")
            sc.write_timings(report, outdir / f"timings_n{n}.json")
            summary_rows.append({
                "n": n,
                **{k: report.aggregates[k] for k in sorted(report.aggregates)},
            })
    except SwarmotError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    summary = {
        "resolved_config": {k: resolved[k] for k in sorted(resolved)},
        "defaulted_fields": defaulted,
        "seed": spec.seed,
        "runs_per_size": args.runs,
        "sizes": sizes,
        "table": summary_rows,
    }
    with open(outdir / "sweep_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if args.json:
        print(json.dumps(summary["table"], sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# built-in oracle suite


def _verify_care(inject_fault=False):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        d = int(rng.integers(2, 9))
        du = int(rng.integers(1, d + 1))
        A = rng.normal(size=(d, d))
        B = rng.normal(size=(d, du))
        Q = rng.normal(size=(d, d))
        Q = Q @ Q.T
        cost = QuadraticCost(Q, np.eye(du))
        P = solve_care(A, B, cost)
        if inject_fault:
            P = P + 1e-3 * np.eye(d)
        res = care_residual(A, B, cost.state_weight, cost.control_weight, P)
        worst = max(worst, res / (1.0 + np.linalg.norm(P)))
    return worst <= 1e-9, f"worst relative CARE residual {worst:.3e}"


def _verify_matching():
    rng = np.random.default_rng(7)
    for n in range(2, 7):
        for _ in range(5):
            C = rng.uniform(size=(n, n))
            sigma, total = solve_matching(CostMatrix(C, "euclidean(1)"))
            best = min(
                sum(C[i, p[i]] for i in range(n))
                for p in itertools.permutations(range(n))
            )
            if abs(total - best) > 1e-12 * max(1.0, best):
                return False, f"matching suboptimal at n={n}"
    return True, "matching equals brute force for n=2..6"


def _verify_cost_consistency():
    from .dynamics import integrate
    spec = sc.ScenarioSpec(world="double_integrator_3d", n=2, seed=99)
    scenario = sc.generate(spec)
    swarm = scenario.swarm
    sigma, policies, cost = assign(
        swarm, scenario.agent_system, scenario.target_systems,
        spec.cost_weights, metric="dynamics",
    )
    worst = 0.0
    for i, j in sigma.items():
        pol = policies[i]
        closed = pol.cost_to_go(swarm.agent_states[i], swarm.target_states[j])
        d = scenario.agent_system.state_dim

        def deriv(t, z):
            x, y = z[:d], z[d:]
            u = pol.control(x, y)
            return np.concatenate([
                scenario.agent_system.rhs(x, u),
                pol.target.rhs(y),
            ])

        def integrand(t, z):
            x, y = z[:d], z[d:]
            return pol.stage_cost(x, pol.control(x, y), y)

        z0 = np.concatenate([swarm.agent_states[i], swarm.target_states[j]])
        traj = integrate(deriv, None, z0, (0.0, 15.0),
                         IntegratorConfig(rel_tol=1e-9, abs_tol=1e-9),
                         cost_integrand=integrand)
        quad = float(traj.cost[-1])
        worst = max(worst, abs(closed - quad) / (1.0 + abs(closed)))
    return worst <= 1e-2, f"worst cost-consistency error {worst:.3e}"


def _verify_stationarity():
    spec = sc.ScenarioSpec(world="double_integrator_3d", n=3, seed=5)
    scenario = sc.generate(spec)
    trace = sc.run_dynamics_policy(
        scenario.swarm, scenario.agent_system, scenario.target_systems,
        spec.cost_weights, sc.default_engagement(spec.world),
    )
    sigma0 = trace.assignment_history[0][1]
    T = trace.times.shape[0]
    for idx in np.linspace(0, T - 1, 5, dtype=int):
        state = swarm_at(trace, int(idx))
        if not state.active_agents:
            continue
        sigma, _, _ = assign(state, scenario.agent_system,
                             scenario.target_systems, spec.cost_weights,
                             metric="dynamics")
        for i, j in sigma.items():
            if sigma0[i] != j:
                return False, f"assignment changed at t={trace.times[idx]:.2f}"
    return True, "dynamics assignment stationary along the trajectory"


def cmd_verify(args) -> int:
    checks = [
        ("care_residual", lambda: _verify_care(args.inject_care_fault)),
        ("matching_bruteforce", _verify_matching),
        ("cost_consistency", _verify_cost_consistency),
        ("stationarity", _verify_stationarity),
    ]
    results = []
    for name, fn in checks:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashed oracle is a failed oracle
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append({"oracle": name, "passed": bool(ok), "detail": detail})
    if args.json:
        print(json.dumps(results, indent=2, sort_keys=True))
    else:
        for r in results:
            mark = "PASS" if r["passed"] else "FAIL"
            print(f"{mark}  {r['oracle']}: {r['detail']}")
    return EXIT_OK if all(r["passed"] for r in results) else EXIT_VERIFY


def _add_shared(parser):
    parser.add_argument("--config", default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--world", default=None,
                        choices=["double_integrator_3d", "quadcopter"])
    parser.add_argument("--n", type=int, default=None)
    parser.add_argument("--metric-exponent", type=float, default=None)
    parser.add_argument("--capture-radius", type=float, default=None)
    parser.add_argument("--horizon", type=float, default=None)
    parser.add_argument("--reassign-interval", type=float, default=None)
    parser.add_argument("--output-dir", default=None)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--json", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swarmot",
        description="Capability-aware swarm assignment simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate one engagement")
    _add_shared(p_run)
    p_run.add_argument("--policy", choices=["dyn", "emd", "both"], default=None)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="Monte Carlo sweep over swarm sizes")
    _add_shared(p_sweep)
    p_sweep.add_argument("--sizes", default=None,
                         help="comma-separated swarm sizes (default 5,10,20)")
    p_sweep.add_argument("--runs", type=int, default=100)
    p_sweep.set_defaults(func=cmd_sweep)

    p_verify = sub.add_parser("verify", help="run the built-in oracle suite")
    p_verify.add_argument("--json", action="store_true")
    p_verify.add_argument("--inject-care-fault", action="store_true",
                          help=argparse.SUPPRESS)
    p_verify.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
