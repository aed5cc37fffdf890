"""Engagement simulator: assignment, tracking, capture, and trace recording.

Two policies are provided.  The dynamics-based policy assigns once at t=0
using the optimal 1v1 tracking cost and lets every agent follow its fixed
tracker until capture.  The distance-based (EMD) policy recomputes a
Euclidean-cost assignment over the surviving pairs on a fixed interval and
swaps trackers on every switch.

Agents are mutually uncoupled, so all active pairs are integrated as one
batched ODE per segment with per-pair running costs carried as augmented
states.  Capture is checked at output-grid samples only (a documented
quantization: output_dt defaults to 0.01 s).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import IntegratorConfig, integrate, output_grid
from .errors import DimensionMismatch, InvalidParameter
from .riccati import TrackingPolicy, synthesize_tracker
from .systems import LinearSystem, QuadraticCost
from . import transport


@dataclass(frozen=True)
class SwarmState:
    """States of all agents and targets plus the active pair bookkeeping."""

    agent_states: np.ndarray   # (n, d)
    target_states: np.ndarray  # (m, d)
    active_agents: tuple[int, ...]
    active_targets: tuple[int, ...]
    time: float = 0.0

    def __post_init__(self):
        if len(self.active_agents) != len(self.active_targets):
            raise InvalidParameter("active agent and target counts must match")

    @classmethod
    def initial(cls, agent_states, target_states) -> "SwarmState":
        agent_states = np.atleast_2d(np.asarray(agent_states, dtype=float))
        target_states = np.atleast_2d(np.asarray(target_states, dtype=float))
        if agent_states.shape[0] != target_states.shape[0]:
            raise InvalidParameter("engine requires equally many agents and targets")
        n = agent_states.shape[0]
        return cls(agent_states, target_states, tuple(range(n)), tuple(range(n)))


@dataclass(frozen=True)
class EngagementConfig:
    capture_radius: float = 1.0
    horizon: float = 10.0
    reassign_interval: float = 0.1
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    metric: str = "dynamics"
    euclidean_exponent: float = 1.0

    def __post_init__(self):
        if self.capture_radius <= 0 or self.horizon <= 0:
            raise InvalidParameter("capture radius and horizon must be positive")
        if self.metric not in ("dynamics", "euclidean"):
            raise InvalidParameter(f"unknown metric {self.metric!r}")
        if self.metric == "euclidean" and self.reassign_interval <= 0:
            raise InvalidParameter("reassign interval must be positive")


@dataclass
class SimulationTrace:
    times: np.ndarray                 # (T,)
    agent_states: np.ndarray          # (n, T, d)
    target_states: np.ndarray         # (n, T, d)
    controls: np.ndarray              # (n, T, d_u)
    inst_cost: np.ndarray             # (n, T)
    cum_cost: np.ndarray              # (n, T), clipped at capture
    active: np.ndarray                # (n, T) bool
    assigned_target: np.ndarray       # (n, T) int
    assignment_history: list          # [(time, {agent: target})]
    switch_count: np.ndarray          # (n,)
    exit_times: np.ndarray            # (n,), nan when never captured
    terminal_status: str              # "captured" or "horizon_exceeded"
    optimal_cost: float               # sum of c_dyn under the t=0 dynamics assignment
    min_agent_distance: float
    config: EngagementConfig

    @property
    def total_cost(self) -> float:
        return float(self.cum_cost[:, -1].sum())

    def cumulative_total(self) -> np.ndarray:
        return self.cum_cost.sum(axis=0)


def capture_check(agent_state, target_state, capture_radius, layout) -> bool:
    """True iff the position distance is within the closed epsilon-ball."""
    dx = layout.position(np.asarray(agent_state)) - layout.position(
        np.asarray(target_state)
    )
    return bool(np.linalg.norm(dx) <= capture_radius)


def assign(
    swarm: SwarmState,
    agent_system: LinearSystem,
    target_systems: list[LinearSystem],
    cost_weights: QuadraticCost,
    metric: str = "dynamics",
    euclidean_exponent: float = 1.0,
):
    """Match active agents to active targets under the chosen metric.

    Returns (sigma, policies, cost_matrix) where sigma maps global agent
    index -> global target index over the active sets and policies maps
    global agent index -> TrackingPolicy for its assigned pair.
    """
    rows = list(swarm.active_agents)
    cols = list(swarm.active_targets)
    if len(rows) != len(cols):
        raise InvalidParameter("active agent and target counts must match")
    X = swarm.agent_states[rows]
    Y = swarm.target_states[cols]
    if metric == "dynamics":
        cost, table, failed = transport.dynamics_cost(
            X, Y, agent_system, [target_systems[j] for j in cols], cost_weights
        )
        assignment, _ = transport.solve_matching(cost)
        if any((i, assignment[i]) in set(failed) for i in range(len(rows))):
            raise InvalidParameter("assignment uses a failed-synthesis pair")
        policies = {
            rows[i]: table[i][assignment[i]] for i in range(len(rows))
        }
    elif metric == "euclidean":
        cost = transport.euclidean_cost(
            X, Y, agent_system.layout, exponent=euclidean_exponent
        )
        assignment, _ = transport.solve_matching(cost)
        policies = {
            rows[i]: synthesize_tracker(
                agent_system, target_systems[cols[assignment[i]]], cost_weights
            )
            for i in range(len(rows))
        }
    else:
        raise InvalidParameter(f"unknown metric {metric!r}")
    sigma = {rows[i]: cols[assignment[i]] for i in range(len(rows))}
    return sigma, policies, cost


class _Recorder:
    """Accumulates the per-sample arrays of a SimulationTrace."""

    def __init__(self, n, d, du, times):
        T = times.shape[0]
        self.times = times
        self.agent_states = np.zeros((n, T, d))
        self.target_states = np.zeros((n, T, d))
        self.controls = np.zeros((n, T, du))
        self.inst_cost = np.zeros((n, T))
        self.cum_cost = np.zeros((n, T))
        self.active = np.zeros((n, T), dtype=bool)
        self.assigned_target = np.full((n, T), -1, dtype=int)


def _stack_policy_mats(policies, agent_system):
    """Per-pair control maps u = Gx x + Gy y + gu and stage-cost offsets."""
    Gx, Gy, gu, gss, At, ct = [], [], [], [], [], []
    for pol in policies:
        Binp = pol.agent.input
        Rw = pol.cost.control_weight
        RB = np.linalg.solve(Rw, Binp.T)
        Gx.append(-pol.gain)
        Gy.append(pol.gain - RB @ pol.adjoint_gain)
        gu.append(-RB @ pol.adjoint_offset)
        gss.append(pol.steady_stage_offset)
        At.append(pol.target.drift)
        ct.append(pol.target.offset)
    return (np.array(Gx), np.array(Gy), np.array(gu), np.array(gss),
            np.array(At), np.array(ct))


def _integrate_pairs(agent_system, cost_weights, policies, X0, Y0, t0, t1, config):
    """Batched integration of uncoupled (agent, target) pairs with running costs.

    Returns (times, X, Y, U, G, C): states (K, T, d), controls (K, T, d_u),
    instantaneous stage cost and its running integral (K, T).
    """
    K, d = X0.shape
    du = agent_system.input_dim
    A, B = agent_system.drift, agent_system.input
    Q, R = cost_weights.state_weight, cost_weights.control_weight
    GxS, GyS, guS, gssS, AtS, ctS = _stack_policy_mats(policies, agent_system)

    def controls_of(X, Y):
        return (np.einsum("kud,kd->ku", GxS, X)
                + np.einsum("kud,kd->ku", GyS, Y) + guS)

    def stage(X, Y, U):
        E = X - Y
        return (np.einsum("kd,de,ke->k", E, Q, E)
                + np.einsum("ku,uv,kv->k", U, R, U) - gssS)

    def deriv(t, z):
        ZZ = z.reshape(K, 2 * d)
        X, Y = ZZ[:, :d], ZZ[:, d:]
        U = controls_of(X, Y)
        dX = X @ A.T + U @ B.T
        dY = np.einsum("kde,ke->kd", AtS, Y) + ctS
        return np.concatenate([dX, dY], axis=1).ravel()

    def cost_integrand(t, z):
        ZZ = z.reshape(K, 2 * d)
        X, Y = ZZ[:, :d], ZZ[:, d:]
        return stage(X, Y, controls_of(X, Y))

    z0 = np.concatenate([X0, Y0], axis=1).ravel()
    traj = integrate(deriv, None, z0, (t0, t1), config, cost_integrand=cost_integrand)
    T = traj.times.shape[0]
    ZZ = traj.states.reshape(T, K, 2 * d)
    X = np.swapaxes(ZZ[:, :, :d], 0, 1)
    Y = np.swapaxes(ZZ[:, :, d:], 0, 1)
    U = np.empty((K, T, du))
    G = np.empty((K, T))
    for ti in range(T):
        Ut = controls_of(X[:, ti], Y[:, ti])
        U[:, ti] = Ut
        G[:, ti] = stage(X[:, ti], Y[:, ti], Ut)
    C = np.atleast_2d(traj.cost).reshape(T, K).T
    return traj.times, X, Y, U, G, C


def _capture_index(X, Y, layout, radius):
    """First grid index at which each pair is captured, or -1."""
    lo, hi = layout.slices["position"]
    dist = np.linalg.norm(X[:, :, lo:hi] - Y[:, :, lo:hi], axis=2)
    hit = dist <= radius
    idx = np.where(hit.any(axis=1), hit.argmax(axis=1), -1)
    return idx


def _min_pairwise_distance(states, layout, active):
    lo, hi = layout.slices["position"]
    best = np.inf
    n = states.shape[0]
    for ti in range(states.shape[1]):
        alive = np.flatnonzero(active[:, ti])
        if alive.size < 2:
            continue
        pos = states[alive, ti, lo:hi]
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.linalg.norm(diff, axis=2)
        dist[np.arange(alive.size), np.arange(alive.size)] = np.inf
        best = min(best, float(dist.min()))
    return best


def _dynamics_optimum(swarm, agent_system, target_systems, cost_weights):
    sigma, _, cost = assign(swarm, agent_system, target_systems, cost_weights,
                            metric="dynamics")
    rows = list(swarm.active_agents)
    cols = list(swarm.active_targets)
    col_pos = {j: k for k, j in enumerate(cols)}
    total = sum(
        cost.entries[i, col_pos[sigma[rows[i]]]] for i in range(len(rows))
    )
    return sigma, float(total)


def run_dynamics_policy(
    swarm: SwarmState,
    agent_system: LinearSystem,
    target_systems: list[LinearSystem],
    cost_weights: QuadraticCost,
    config: EngagementConfig,
) -> SimulationTrace:
    """Assign once with the tracking-cost metric, then track until capture."""
    n = swarm.agent_states.shape[0]
    d = agent_system.state_dim
    layout = agent_system.layout
    sigma, policies, cost = assign(
        swarm, agent_system, target_systems, cost_weights, metric="dynamics"
    )
    rows = list(swarm.active_agents)
    cols = list(swarm.active_targets)
    col_pos = {j: k for k, j in enumerate(cols)}
    opt = float(sum(cost.entries[i, col_pos[sigma[rows[i]]]]
                    for i in range(len(rows))))

    times = output_grid(0.0, config.horizon, config.integrator.output_dt)
    rec = _Recorder(n, d, agent_system.input_dim, times)
    pol_list = [policies[i] for i in rows]
    X0 = swarm.agent_states[rows]
    Y0 = swarm.target_states[[sigma[i] for i in rows]]
    _, X, Y, U, G, C = _integrate_pairs(
        agent_system, cost_weights, pol_list, X0, Y0,
        0.0, config.horizon, config.integrator,
    )
    cap = _capture_index(X, Y, layout, config.capture_radius)
    exit_times = np.full(n, np.nan)
    exit_idx = np.full(n, -1, dtype=int)
    for k, i in enumerate(rows):
        stop = cap[k] if cap[k] >= 0 else times.shape[0] - 1
        rec.agent_states[i] = X[k]
        rec.target_states[i] = Y[k]
        rec.controls[i] = U[k]
        rec.inst_cost[i] = G[k]
        rec.cum_cost[i] = C[k]
        rec.assigned_target[i, :] = sigma[i]
        rec.active[i, : stop + 1] = True
        if cap[k] >= 0:
            exit_times[i] = times[cap[k]]
            exit_idx[i] = cap[k]
            # freeze after capture: held state, zero control/cost
            rec.agent_states[i, stop + 1:] = X[k, stop]
            rec.target_states[i, stop + 1:] = Y[k, stop]
            rec.controls[i, stop + 1:] = 0.0
            rec.inst_cost[i, stop + 1:] = 0.0
            rec.cum_cost[i, stop + 1:] = C[k, stop]

    if (exit_idx >= 0).all():
        end = int(max(exit_idx.max(), 1))
        status = "captured"
    else:
        end = times.shape[0] - 1
        status = "horizon_exceeded"
    sl = slice(0, end + 1)
    min_dist = _min_pairwise_distance(rec.agent_states[:, sl], layout,
                                      rec.active[:, sl])
    return SimulationTrace(
        times=times[sl],
        agent_states=rec.agent_states[:, sl],
        target_states=rec.target_states[:, sl],
        controls=rec.controls[:, sl],
        inst_cost=rec.inst_cost[:, sl],
        cum_cost=rec.cum_cost[:, sl],
        active=rec.active[:, sl],
        assigned_target=rec.assigned_target[:, sl],
        assignment_history=[(0.0, dict(sigma))],
        switch_count=np.zeros(n, dtype=int),
        exit_times=exit_times,
        terminal_status=status,
        optimal_cost=opt,
        min_agent_distance=min_dist,
        config=config,
    )


def run_emd_policy(
    swarm: SwarmState,
    agent_system: LinearSystem,
    target_systems: list[LinearSystem],
    cost_weights: QuadraticCost,
    config: EngagementConfig,
) -> SimulationTrace:
    """Reassign on the Euclidean metric every reassign_interval; track between."""
    if config.metric != "euclidean":
        config = replace(config, metric="euclidean")
    n = swarm.agent_states.shape[0]
    d = agent_system.state_dim
    du = agent_system.input_dim
    layout = agent_system.layout
    dt = config.integrator.output_dt
    _, opt = _dynamics_optimum(swarm, agent_system, target_systems, cost_weights)

    times = output_grid(0.0, config.horizon, dt)
    T = times.shape[0]
    rec = _Recorder(n, d, du, times)
    history = []
    switch_count = np.zeros(n, dtype=int)
    exit_times = np.full(n, np.nan)
    exit_idx = np.full(n, -1, dtype=int)
    prev_sigma: dict[int, int] = {}

    cur = swarm
    cum_offset = np.zeros(n)
    seg_start_idx = 0
    while seg_start_idx < T - 1 and cur.active_agents:
        t0 = times[seg_start_idx]
        t1 = min(t0 + config.reassign_interval, config.horizon)
        seg_end_idx = int(np.searchsorted(times, t1 - 1e-12))
        seg_end_idx = max(seg_end_idx, seg_start_idx + 1)
        t1 = times[seg_end_idx]

        sigma, policies, _ = assign(
            cur, agent_system, target_systems, cost_weights,
            metric="euclidean", euclidean_exponent=config.euclidean_exponent,
        )
        history.append((float(t0), dict(sigma)))
        for i, j in sigma.items():
            if i in prev_sigma and prev_sigma[i] != j:
                switch_count[i] += 1
        prev_sigma.update(sigma)

        rows = list(cur.active_agents)
        pol_list = [policies[i] for i in rows]
        X0 = cur.agent_states[rows]
        Y0 = cur.target_states[[sigma[i] for i in rows]]
        seg_t, X, Y, U, G, C = _integrate_pairs(
            agent_system, cost_weights, pol_list, X0, Y0, t0, t1,
            config.integrator,
        )
        cap = _capture_index(X, Y, layout, config.capture_radius)
        span = slice(seg_start_idx, seg_start_idx + seg_t.shape[0])
        new_agent_states = cur.agent_states.copy()
        new_target_states = cur.target_states.copy()
        survivors_a, survivors_t = [], []
        for k, i in enumerate(rows):
            j = sigma[i]
            stop = cap[k] if cap[k] >= 0 else seg_t.shape[0] - 1
            rec.agent_states[i, span] = X[k]
            rec.target_states[i, span] = Y[k]
            rec.controls[i, span] = U[k]
            rec.inst_cost[i, span] = G[k]
            rec.cum_cost[i, span] = cum_offset[i] + C[k]
            rec.assigned_target[i, span] = j
            rec.active[i, seg_start_idx:seg_start_idx + stop + 1] = True
            if cap[k] >= 0:
                exit_times[i] = seg_t[stop]
                glob_stop = seg_start_idx + stop
                exit_idx[i] = glob_stop
                rec.agent_states[i, glob_stop + 1:] = X[k, stop]
                rec.target_states[i, glob_stop + 1:] = Y[k, stop]
                rec.controls[i, glob_stop + 1:] = 0.0
                rec.inst_cost[i, glob_stop + 1:] = 0.0
                rec.cum_cost[i, glob_stop + 1:] = cum_offset[i] + C[k, stop]
                rec.assigned_target[i, glob_stop + 1:] = j
            else:
                cum_offset[i] += C[k, -1]
                new_agent_states[i] = X[k, -1]
                new_target_states[j] = Y[k, -1]
                survivors_a.append(i)
                survivors_t.append(j)
        cur = SwarmState(
            new_agent_states, new_target_states,
            tuple(survivors_a), tuple(survivors_t), time=float(t1),
        )
        seg_start_idx = seg_end_idx

    if (exit_idx >= 0).all():
        end = int(max(exit_idx.max(), 1))
        status = "captured"
    else:
        end = T - 1
        status = "horizon_exceeded"
    sl = slice(0, end + 1)
    min_dist = _min_pairwise_distance(rec.agent_states[:, sl], layout,
                                      rec.active[:, sl])
    return SimulationTrace(
        times=times[sl],
        agent_states=rec.agent_states[:, sl],
        target_states=rec.target_states[:, sl],
        controls=rec.controls[:, sl],
        inst_cost=rec.inst_cost[:, sl],
        cum_cost=rec.cum_cost[:, sl],
        active=rec.active[:, sl],
        assigned_target=rec.assigned_target[:, sl],
        assignment_history=history,
        switch_count=switch_count,
        exit_times=exit_times,
        terminal_status=status,
        optimal_cost=opt,
        min_agent_distance=min_dist,
        config=config,
    )


def swarm_at(trace: SimulationTrace, index: int) -> SwarmState:
    """Reconstruct the swarm state at an output-grid sample of a trace.

    Target trajectories are recorded per agent under the assigned pairing,
    so the global target states are scattered back through the assignment.
    """
    n, T, d = trace.agent_states.shape
    if not 0 <= index < T:
        raise InvalidParameter(f"sample index {index} out of range")
    agent_states = trace.agent_states[:, index].copy()
    target_states = np.zeros((n, d))
    for i in range(n):
        j = int(trace.assigned_target[i, index])
        if j >= 0:
            target_states[j] = trace.target_states[i, index]
    alive = np.flatnonzero(trace.active[:, index])
    active_agents = tuple(int(i) for i in alive)
    active_targets = tuple(int(trace.assigned_target[i, index]) for i in alive)
    return SwarmState(agent_states, target_states, active_agents,
                      active_targets, time=float(trace.times[index]))


# ---------------------------------------------------------------------------
# trace serialization


def write_trace_csv(trace: SimulationTrace, path):
    """Long-format CSV: one row per (time, agent).

    Column order: time, agent_id, x0..x{d-1}, u0..u{du-1},
    instantaneous_cost, cumulative_cost, assigned_target, active_flag.
    """
    n, T, d = trace.agent_states.shape
    du = trace.controls.shape[2]
    header = (
        ["time", "agent_id"]
        + [f"x{k}" for k in range(d)]
        + [f"u{k}" for k in range(du)]
        + ["instantaneous_cost", "cumulative_cost", "assigned_target",
           "active_flag"]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for ti in range(T):
            for i in range(n):
                row = (
                    [repr(float(trace.times[ti])), str(i)]
                    + [repr(float(v)) for v in trace.agent_states[i, ti]]
                    + [repr(float(v)) for v in trace.controls[i, ti]]
                    + [repr(float(trace.inst_cost[i, ti])),
                       repr(float(trace.cum_cost[i, ti])),
                       str(int(trace.assigned_target[i, ti])),
                       str(int(trace.active[i, ti]))]
                )
                writer.writerow(row)


def trace_summary(trace: SimulationTrace, seed=None, extra=None) -> dict:
    out = {
        "seed": seed,
        "metric": trace.config.metric,
        "capture_radius": trace.config.capture_radius,
        "horizon": trace.config.horizon,
        "reassign_interval": trace.config.reassign_interval,
        "output_dt": trace.config.integrator.output_dt,
        "assignment_history": [
            {"time": t, "sigma": {str(k): v for k, v in s.items()}}
            for t, s in trace.assignment_history
        ],
        "switch_counts": [int(s) for s in trace.switch_count],
        "exit_times": [None if not np.isfinite(t) else float(t)
                       for t in trace.exit_times],
        "terminal_status": trace.terminal_status,
        "total_cost": trace.total_cost,
        "optimal_cost": trace.optimal_cost,
        "min_agent_distance": trace.min_agent_distance,
    }
    if extra:
        out.update(extra)
    return out


def write_trace_json(trace: SimulationTrace, path, seed=None, extra=None):
    with open(path, "w") as fh:
        json.dump(trace_summary(trace, seed=seed, extra=extra), fh,
                  indent=2, sort_keys=True)
        fh.write("\n")
