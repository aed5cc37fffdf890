"""Benchmark system builders and adaptive RK integration with cost quadrature."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import (
    DimensionMismatch,
    InvalidParameter,
    NonFiniteState,
    StepSizeUnderflow,
)
from .riccati import TrackingPolicy
from .systems import LinearSystem, StateLayout

DOUBLE_INTEGRATOR_LAYOUT = StateLayout(
    dim=6, slices={"position": (0, 3), "velocity": (3, 6)}
)
QUADCOPTER_LAYOUT = StateLayout(
    dim=12,
    slices={
        "position": (0, 3),
        "attitude": (3, 6),
        "velocity": (6, 9),
        "rates": (9, 12),
    },
)


def double_integrator_3d() -> LinearSystem:
    """Three independent position/velocity chains, velocity directly forced."""
    A = np.zeros((6, 6))
    A[:3, 3:] = np.eye(3)
    B = np.zeros((6, 3))
    B[3:, :] = np.eye(3)
    return LinearSystem(A, B, np.zeros(6), layout=DOUBLE_INTEGRATOR_LAYOUT)


def quadcopter_linearized(
    mass: float = 0.1,
    inertia: tuple[float, float, float] = (0.00062, 0.00113, 0.9 * (0.00062 + 0.00113)),
    gravity: float = 9.81,
) -> LinearSystem:
    """Small-angle linearized quadcopter, 12 states, 4 inputs.

    State order: [x, y, z, psi, theta, phi, u, v, w, p, q, r].
    Inputs: thrust f_t and body torques (tau_x, tau_y, tau_z).  Wind
    disturbance forces and torques are zeroed at construction; they are not
    part of the control vector.
    """
    Ixx, Iyy, Izz = inertia
    if min(mass, Ixx, Iyy, Izz, gravity) <= 0:
        raise InvalidParameter("mass, inertias, and gravity must be positive")
    A = np.zeros((12, 12))
    A[0, 6] = 1.0   # x' = u
    A[1, 7] = 1.0   # y' = v
    A[2, 8] = 1.0   # z' = w
    A[3, 11] = 1.0  # psi' = r
    A[4, 10] = 1.0  # theta' = q
    A[5, 9] = 1.0   # phi' = p
    A[6, 4] = -gravity  # u' = -g theta
    A[7, 5] = gravity   # v' = g phi
    B = np.zeros((12, 4))
    B[8, 0] = -1.0 / mass  # w' = -f_t / m
    B[9, 1] = 1.0 / Ixx
    B[10, 2] = 1.0 / Iyy
    B[11, 3] = 1.0 / Izz
    return LinearSystem(A, B, np.zeros(12), layout=QUADCOPTER_LAYOUT)


def closed_loop_target(
    target_plant: LinearSystem,
    policy: TrackingPolicy,
    reference: np.ndarray,
) -> LinearSystem:
    """Fold a tracking policy around a plant chasing a fixed reference state.

    Returns the autonomous affine system  dy/dt = (A - B K) y + B K r  plus
    the policy's feedforward applied at the reference.  Its trajectories
    converge to the reference position.
    """
    reference = np.asarray(reference, dtype=float).reshape(-1)
    if reference.shape[0] != target_plant.state_dim:
        raise DimensionMismatch("reference must be a full plant state")
    if policy.agent.state_dim != target_plant.state_dim:
        raise DimensionMismatch("policy was not synthesized for this plant")
    if np.abs(policy.gain).max() == 0:
        raise InvalidParameter("degenerate zero-gain policy")
    A, B = target_plant.drift, target_plant.input
    K = policy.gain
    offset = B @ (K @ reference + policy.feedforward(reference))
    return LinearSystem(A - B @ K, np.zeros((target_plant.state_dim, 0)),
                        offset, layout=target_plant.layout)


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-6
    abs_tol: float = 1e-8
    max_step: float = np.inf
    output_dt: float = 0.01

    def __post_init__(self):
        if min(self.rel_tol, self.abs_tol, self.max_step, self.output_dt) <= 0:
            raise InvalidParameter("integrator tolerances and steps must be positive")


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray           # (T, d)
    controls: np.ndarray | None  # (T, d_u) when a control law was supplied
    cost: np.ndarray | None      # (T,) or (T, k): running quadrature


def output_grid(t0: float, t1: float, dt: float) -> np.ndarray:
    n = int(np.floor((t1 - t0) / dt + 1e-9))
    grid = t0 + dt * np.arange(n + 1)
    if grid[-1] < t1 - 1e-12 * max(1.0, abs(t1)):
        grid = np.append(grid, t1)
    else:
        grid[-1] = t1
    return grid


def integrate(
    system,
    control_law,
    x0: np.ndarray,
    t_span: tuple[float, float],
    config: IntegratorConfig,
    cost_integrand=None,
) -> Trajectory:
    """Adaptive Dormand-Prince 4(5) integration sampled on the output grid.

    ``system`` is either a LinearSystem (driven by ``control_law(t, x)``)
    or a callable f(t, x) for a coupled collection.  When
    ``cost_integrand(t, x)`` is given (scalar- or vector-valued) the
    running cost is integrated as augmented state, so quadrature error
    obeys the same tolerances as the state itself.
    """
    t0, t1 = t_span
    if not t1 > t0:
        raise InvalidParameter("t_span must be increasing")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    d = x0.shape[0]
    if isinstance(system, LinearSystem):
        if d != system.state_dim:
            raise DimensionMismatch("initial state does not match system")

        def deriv(t, x):
            u = control_law(t, x) if control_law is not None else None
            return system.rhs(x, u)
    else:
        deriv = system

    n_cost = 0
    if cost_integrand is not None:
        n_cost = np.size(cost_integrand(t0, x0))

        def rhs(t, z):
            x = z[:d]
            return np.concatenate(
                [np.atleast_1d(deriv(t, x)),
                 np.atleast_1d(cost_integrand(t, x))]
            )

        z0 = np.concatenate([x0, np.zeros(n_cost)])
    else:
        rhs = deriv
        z0 = x0

    grid = output_grid(t0, t1, config.output_dt)
    sol = solve_ivp(
        rhs, (t0, t1), z0, method="RK45", t_eval=grid,
        rtol=config.rel_tol, atol=config.abs_tol, max_step=config.max_step,
    )
    if sol.status == -1:
        raise StepSizeUnderflow(sol.message)
    if not np.all(np.isfinite(sol.y)):
        raise NonFiniteState("integration produced non-finite values")

    states = sol.y[:d].T.copy()
    cost = sol.y[d:].T.copy() if n_cost else None
    if cost is not None and n_cost == 1:
        cost = cost[:, 0]
    controls = None
    if isinstance(system, LinearSystem) and control_law is not None:
        controls = np.array([control_law(t, x) for t, x in zip(sol.t, states)])
    return Trajectory(times=sol.t.copy(), states=states, controls=controls, cost=cost)
