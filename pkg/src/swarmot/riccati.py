"""Continuous algebraic Riccati solver and 1-vs-1 tracking-policy synthesis.

The tracker drives an agent  dx/dt = A x + B u  onto an autonomous affine
target  dy/dt = At y + c  so that the error e = x - y reaches the optimal
steady state of the quadratic stage cost

    g(x, u, y) = e' Q e + u' R u  -  (e_ss' Q e_ss + u_ss' R u_ss).

The optimal control is u = -R^{-1} B' (P e + p(y)) where P solves the CARE
for (A, B, Q, R) and the adjoint p(y) = M y + m is affine in the target
state (the target evolves autonomously, so the bounded adjoint solution is
a linear function of it; M solves a Sylvester equation and m a linear one).

The closed-form cost-to-go carries, besides the familiar quadratic and
adjoint terms, a correction that accounts for the target's own transient:
the value function constant integrates to

    dq = yt' X yt - 2 glin' At^{-1} yt,       yt = y(0) - y_ss,

with X a Lyapunov solution in the target drift.  Without this term the
quadratic expression disagrees with the integrated stage cost whenever the
target starts away from its rest point.  The trajectory-quadrature oracle
in the test suite pins this down.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import (
    DimensionMismatch,
    IllConditioned,
    InvalidParameter,
    NotStabilizable,
    SteadyStateUndefined,
)
from .systems import LinearSystem, QuadraticCost

TOL_CARE = 1e-9

_care_cache: dict[bytes, np.ndarray] = {}
_policy_cache: dict[bytes, "TrackingPolicy"] = {}


def clear_caches():
    _care_cache.clear()
    _policy_cache.clear()


def _rank(mat: np.ndarray, scale: float) -> int:
    return int(np.linalg.matrix_rank(mat, tol=1e-8 * max(1.0, scale)))


def check_stabilizable(A: np.ndarray, B: np.ndarray) -> bool:
    """PBH test: every eigenvalue of A with Re >= 0 is controllable."""
    d = A.shape[0]
    scale = max(np.abs(A).max(), np.abs(B).max() if B.size else 0.0)
    for lam in np.linalg.eigvals(A):
        if lam.real >= -1e-9:
            pencil = np.hstack([A - lam * np.eye(d), B])
            if _rank(pencil, scale) < d:
                return False
    return True


def check_detectable(A: np.ndarray, Q: np.ndarray) -> bool:
    """PBH test on (A, Q^{1/2}): no unobservable mode with Re >= 0."""
    d = A.shape[0]
    evals, vecs = np.linalg.eigh(0.5 * (Q + Q.T))
    evals = np.clip(evals, 0.0, None)
    C = (np.sqrt(evals)[:, None] * vecs.T)[evals > 1e-12 * max(1.0, evals.max())]
    scale = max(np.abs(A).max(), np.abs(C).max() if C.size else 0.0)
    for lam in np.linalg.eigvals(A):
        if lam.real >= -1e-9:
            pencil = np.vstack([A - lam * np.eye(d), C])
            if _rank(pencil, scale) < d:
                return False
    return True


def care_residual(A, B, Q, R, P) -> float:
    S = B @ np.linalg.solve(R, B.T)
    return float(np.linalg.norm(A.T @ P + P @ A - P @ S @ P + Q))


def solve_care(
    drift: np.ndarray,
    input: np.ndarray,
    cost: QuadraticCost,
    tol: float = TOL_CARE,
) -> np.ndarray:
    """Stabilizing solution of  A'P + PA - P B R^{-1} B' P + Q = 0.

    Ordered real Schur factorization of the 2d x 2d Hamiltonian, followed
    by Newton (Lyapunov) refinement while the residual exceeds the
    relative tolerance.  Raises NotStabilizable when the stable invariant
    subspace does not exist, IllConditioned when the tolerance is
    unreachable.
    """
    A = np.atleast_2d(np.asarray(drift, dtype=float))
    B = np.asarray(input, dtype=float).reshape(A.shape[0], -1)
    Q = cost.state_weight
    R = cost.control_weight
    d = A.shape[0]
    if Q.shape != (d, d):
        raise DimensionMismatch(f"state weight shape {Q.shape} != ({d}, {d})")
    if R.shape[0] != B.shape[1]:
        raise DimensionMismatch("control weight does not match input dimension")

    key = A.tobytes() + B.tobytes() + cost.cache_key()
    cached = _care_cache.get(key)
    if cached is not None:
        return cached

    if not check_stabilizable(A, B):
        raise NotStabilizable("(drift, input) pair is not stabilizable")
    if not check_detectable(A, Q):
        raise NotStabilizable("(drift, state_weight^{1/2}) pair is not detectable")

    S = B @ np.linalg.solve(R, B.T)
    H = np.block([[A, -S], [-Q, -A.T]])
    _, Z, sdim = linalg.schur(H, output="real", sort=lambda x: x.real < 0.0)
    if sdim != d:
        raise NotStabilizable(
            f"Hamiltonian has {sdim} stable eigenvalues, expected {d}"
        )
    U11 = Z[:d, :d]
    U21 = Z[d:, :d]
    P = np.linalg.solve(U11.T, U21.T).T
    P = 0.5 * (P + P.T)

    # Newton (Lyapunov) refinement: Acl' dP + dP Acl = -residual; the Schur
    # seed is stabilizing, so the iteration converges quadratically
    for _ in range(20):
        norm_scale = 1.0 + np.linalg.norm(P)
        achieved = care_residual(A, B, Q, R, P)
        if achieved <= tol * norm_scale:
            break
        Acl = A - S @ P
        res = A.T @ P + P @ A - P @ S @ P + Q
        P = P + linalg.solve_sylvester(Acl.T, Acl, -res)
        P = 0.5 * (P + P.T)
    else:
        achieved = care_residual(A, B, Q, R, P)
    if achieved > tol * (1.0 + np.linalg.norm(P)):
        raise IllConditioned(
            f"CARE residual {achieved:.3e} exceeds tolerance", achieved
        )
    P.setflags(write=False)
    _care_cache[key] = P
    return P


@dataclass(frozen=True)
class TrackingPolicy:
    """Synthesized 1v1 tracker: feedback gain plus affine feedforward.

    ``adjoint_gain``/``adjoint_offset`` give p(y) = M y + m.  For a target
    with Hurwitz drift the steady-state quantities are fixed attributes;
    for a static target (zero drift and offset) the rest point is the
    evaluation-time target state and they are computed per call.
    """

    agent: LinearSystem
    target: LinearSystem
    cost: QuadraticCost
    riccati_solution: np.ndarray
    gain: np.ndarray
    adjoint_gain: np.ndarray
    adjoint_offset: np.ndarray
    target_steady_state: np.ndarray | None
    steady_state_error: np.ndarray | None
    steady_state_control: np.ndarray | None
    steady_adjoint: np.ndarray | None
    steady_stage_offset: float | None
    exog_quad: np.ndarray | None
    exog_lin: np.ndarray | None
    error_map: str = "difference"

    @property
    def is_static_target(self) -> bool:
        return self.target_steady_state is None

    @property
    def closed_loop_drift(self) -> np.ndarray:
        return self.agent.drift - self.agent.input @ self.gain

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        return self.adjoint_gain @ y + self.adjoint_offset

    def feedforward(self, y: np.ndarray) -> np.ndarray:
        """The affine control correction beyond error feedback."""
        B, R = self.agent.input, self.cost.control_weight
        return -np.linalg.solve(R, B.T @ self.adjoint(y))

    def control(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        self._check_dims(x, y)
        return -self.gain @ (x - y) + self.feedforward(y)

    def _check_dims(self, x, y):
        if np.shape(x)[-1] != self.agent.state_dim:
            raise DimensionMismatch("agent state has wrong dimension")
        if np.shape(y)[-1] != self.target.state_dim:
            raise DimensionMismatch("target state has wrong dimension")

    def _steady(self, y: np.ndarray):
        """(e_ss, u_ss, p_ss, g_ss) for the rest point implied by y."""
        if not self.is_static_target:
            return (
                self.steady_state_error,
                self.steady_state_control,
                self.steady_adjoint,
                self.steady_stage_offset,
            )
        A, B = self.agent.drift, self.agent.input
        R = self.cost.control_weight
        P = self.riccati_solution
        Acl = A - B @ self.gain
        S = B @ np.linalg.solve(R, B.T)
        w_ss = A @ y  # D = A - 0, c = 0
        p_ss = np.linalg.solve(Acl.T, -(P @ w_ss))
        e_ss = -np.linalg.solve(Acl, w_ss - S @ p_ss)
        u_ss = -np.linalg.solve(R, B.T @ (P @ e_ss + p_ss))
        g_ss = self.cost.stage(e_ss, u_ss)
        return e_ss, u_ss, p_ss, g_ss

    def stage_cost(self, x: np.ndarray, u: np.ndarray, y: np.ndarray) -> float:
        """Instantaneous cost with the steady-state offset subtracted."""
        _, _, _, g_ss = self._steady(y)
        return self.cost.stage(x - y, u) - g_ss

    def cost_to_go(self, x: np.ndarray, y: np.ndarray) -> float:
        """Optimal total tracking cost from the given initial states."""
        self._check_dims(x, y)
        P = self.riccati_solution
        e0 = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        p0 = self.adjoint(y)
        e_ss, _, p_ss, _ = self._steady(y)
        val = float(
            e0 @ P @ e0 + 2.0 * p0 @ e0 - e_ss @ P @ e_ss - 2.0 * p_ss @ e_ss
        )
        if not self.is_static_target:
            yt = np.asarray(y, dtype=float) - self.target_steady_state
            val += float(yt @ self.exog_quad @ yt)
            val -= 2.0 * float(
                self.exog_lin @ np.linalg.solve(self.target.drift, yt)
            )
        return val


def synthesize_tracker(
    agent: LinearSystem, target: LinearSystem, cost: QuadraticCost
) -> TrackingPolicy:
    """Build the infinite-horizon tracking policy for one agent/target pair.

    The target must be autonomous (input_dim == 0) and either have Hurwitz
    drift or be static (zero drift and offset); otherwise the steady state
    of the tracking problem is undefined.
    """
    if not target.is_autonomous:
        raise InvalidParameter("target system must be autonomous (input_dim == 0)")
    if agent.state_dim != target.state_dim:
        raise DimensionMismatch(
            "agent and target state dimensions differ; the error map x - y "
            "requires equal dimensions"
        )
    if np.abs(agent.offset).max() > 0:
        raise InvalidParameter("agent affine offsets are not supported")

    key = agent.cache_key() + target.cache_key() + cost.cache_key()
    cached = _policy_cache.get(key)
    if cached is not None:
        return cached

    A, B = agent.drift, agent.input
    At, c = target.drift, target.offset
    Q, R = cost.state_weight, cost.control_weight
    P = solve_care(A, B, cost)
    K = np.linalg.solve(R, B.T @ P)
    Acl = A - B @ K
    S = B @ np.linalg.solve(R, B.T)
    D = A - At

    target_eigs = np.linalg.eigvals(At)
    scale = max(1.0, np.abs(At).max())
    static = np.abs(At).max() <= 1e-12 and np.abs(c).max() <= 1e-12
    hurwitz = target_eigs.real.max() < -1e-9 * scale
    if not (static or hurwitz):
        raise SteadyStateUndefined(
            "target drift is neither Hurwitz nor zero; tracking steady state "
            "does not exist"
        )

    # bounded adjoint p(y) = M y + m:  Acl' M + M At = -P D,  Acl' m = (P - M) c
    M = linalg.solve_sylvester(Acl.T, At, -P @ D)
    m = np.linalg.solve(Acl.T, (P - M) @ c)

    if static:
        policy = TrackingPolicy(
            agent=agent, target=target, cost=cost,
            riccati_solution=P, gain=K,
            adjoint_gain=M, adjoint_offset=m,
            target_steady_state=None,
            steady_state_error=None, steady_state_control=None,
            steady_adjoint=None, steady_stage_offset=None,
            exog_quad=None, exog_lin=None,
        )
    else:
        y_ss = -np.linalg.solve(At, c)
        w_ss = D @ y_ss - c
        p_ss = M @ y_ss + m
        e_ss = -np.linalg.solve(Acl, w_ss - S @ p_ss)
        u_ss = -np.linalg.solve(R, B.T @ (P @ e_ss + p_ss))
        g_ss = cost.stage(e_ss, u_ss)
        # value-constant correction for the target transient
        Gs = M.T @ D + D.T @ M - M.T @ S @ M
        X = linalg.solve_sylvester(At.T, At, -Gs)
        X = 0.5 * (X + X.T)
        g_lin = D.T @ p_ss + M.T @ w_ss - M.T @ S @ p_ss
        policy = TrackingPolicy(
            agent=agent, target=target, cost=cost,
            riccati_solution=P, gain=K,
            adjoint_gain=M, adjoint_offset=m,
            target_steady_state=y_ss,
            steady_state_error=e_ss, steady_state_control=u_ss,
            steady_adjoint=p_ss, steady_stage_offset=g_ss,
            exog_quad=X, exog_lin=g_lin,
        )
    _policy_cache[key] = policy
    return policy


def cost_to_go(policy: TrackingPolicy, agent_state, target_state) -> float:
    """Closed-form optimal cost for the pair, see TrackingPolicy.cost_to_go."""
    return policy.cost_to_go(np.asarray(agent_state), np.asarray(target_state))
