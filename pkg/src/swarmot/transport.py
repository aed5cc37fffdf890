"""Discrete optimal transport: cost matrices, the Kantorovich LP, and matching.

The matching path is a dense Jonker-Volgenant shortest-augmenting-path
solver (O(n^3)) that also produces optimal dual potentials.  Ties between
cost-equal optimal assignments are broken deterministically: among all
permutations supported on the dual-tight edges, the lexicographically
smallest one is returned.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .errors import (
    DimensionMismatch,
    Infeasible,
    InvalidParameter,
    NonSquare,
    SwarmotError,
)
from .riccati import TrackingPolicy, synthesize_tracker
from .systems import LinearSystem, QuadraticCost, StateLayout

#: finite sentinel for pairs whose tracker synthesis failed
FAILED_PAIR_COST = 1e15


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point cloud with weights on the probability simplex."""

    locations: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(self.locations) != w.shape[0]:
            raise DimensionMismatch("locations and weights must have equal length")
        if w.min() < 0 or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidParameter("weights must be non-negative and sum to 1")

    @classmethod
    def uniform(cls, locations) -> "DiscreteMeasure":
        n = len(locations)
        return cls(np.asarray(locations), np.full(n, 1.0 / n))


@dataclass(frozen=True)
class CostMatrix:
    entries: np.ndarray
    metric_tag: str

    def __post_init__(self):
        entries = np.atleast_2d(np.asarray(self.entries, dtype=float))
        if not np.all(np.isfinite(entries)):
            raise InvalidParameter("cost entries must be finite")
        object.__setattr__(self, "entries", entries)

    @property
    def shape(self):
        return self.entries.shape


@dataclass(frozen=True)
class Coupling:
    """Non-negative transport plan with prescribed marginals."""

    matrix: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.matrix, dtype=float)
        if P.min() < -1e-12:
            raise InvalidParameter("coupling must be non-negative")
        if (np.abs(P.sum(axis=1) - self.row_marginal).max() > 1e-9
                or np.abs(P.sum(axis=0) - self.col_marginal).max() > 1e-9):
            raise InvalidParameter("coupling violates marginal constraints")


@dataclass(frozen=True)
class Assignment:
    """Permutation sigma mapping agent index -> target index."""

    sigma: tuple[int, ...]

    def __post_init__(self):
        if sorted(self.sigma) != list(range(len(self.sigma))):
            raise InvalidParameter("sigma must be a permutation")

    def __getitem__(self, i: int) -> int:
        return self.sigma[i]

    def __len__(self) -> int:
        return len(self.sigma)

    def to_coupling(self) -> Coupling:
        n = len(self.sigma)
        P = np.zeros((n, n))
        P[np.arange(n), list(self.sigma)] = 1.0 / n
        w = np.full(n, 1.0 / n)
        return Coupling(P, w, w)


def euclidean_cost(
    agents: np.ndarray,
    targets: np.ndarray,
    layout: StateLayout,
    exponent: float = 1.0,
    target_layout: StateLayout | None = None,
) -> CostMatrix:
    """Pairwise position-distance costs  ||pos(x_i) - pos(y_j)||^alpha."""
    if exponent < 1.0:
        raise InvalidParameter("exponent must be >= 1")
    px = layout.position(np.atleast_2d(agents))
    py = (target_layout or layout).position(np.atleast_2d(targets))
    if px.shape[1] != py.shape[1]:
        raise DimensionMismatch("agent and target position slices differ")
    diff = px[:, None, :] - py[None, :, :]
    dist = np.linalg.norm(diff, axis=2)
    return CostMatrix(dist**exponent, metric_tag=f"euclidean({exponent:g})")


def dynamics_cost(
    agents: np.ndarray,
    targets: np.ndarray,
    agent_system: LinearSystem,
    target_systems: list[LinearSystem],
    cost_weights: QuadraticCost,
) -> tuple[CostMatrix, list[list[TrackingPolicy | None]], list[tuple[int, int]]]:
    """Optimal 1v1 tracking cost for every (agent, target) pair.

    Returns the cost matrix, the n x m table of synthesized policies (for
    reuse by the engine without re-synthesis), and the list of (i, j) pairs
    whose synthesis failed and received the finite sentinel cost.
    """
    agents = np.atleast_2d(agents)
    targets = np.atleast_2d(targets)
    n, m = agents.shape[0], targets.shape[0]
    if len(target_systems) != m:
        raise DimensionMismatch("one target system per target state required")
    entries = np.empty((n, m))
    table: list[list[TrackingPolicy | None]] = [[None] * m for _ in range(n)]
    failed: list[tuple[int, int]] = []
    # policies depend only on the dynamics pair; synthesize_tracker memoizes,
    # so homogeneous swarms pay for a single Riccati solve
    for j, tsys in enumerate(target_systems):
        try:
            policy = synthesize_tracker(agent_system, tsys, cost_weights)
        except SwarmotError:
            for i in range(n):
                entries[i, j] = FAILED_PAIR_COST
                failed.append((i, j))
            continue
        for i in range(n):
            table[i][j] = policy
            entries[i, j] = policy.cost_to_go(agents[i], targets[j])
    return CostMatrix(entries, metric_tag="dynamics"), table, failed


def solve_kantorovich(
    cost: CostMatrix, a: np.ndarray, b: np.ndarray
) -> tuple[Coupling, float]:
    """Vertex-optimal coupling minimizing <C, P> over U(a, b), via LP."""
    C = cost.entries
    n, m = C.shape
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != (n,) or b.shape != (m,):
        raise DimensionMismatch("marginals do not match cost matrix shape")
    if abs(a.sum() - b.sum()) > 1e-9:
        raise Infeasible("marginals have different total mass")
    # equality constraints: row sums = a, col sums = b (drop one redundant row)
    rows = []
    for i in range(n):
        r = np.zeros(n * m)
        r[i * m:(i + 1) * m] = 1.0
        rows.append(r)
    for j in range(m - 1):
        r = np.zeros(n * m)
        r[j::m] = 1.0
        rows.append(r)
    A_eq = np.array(rows)
    b_eq = np.concatenate([a, b[:-1]])
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None),
                  method="highs-ds")
    if not res.success:
        raise Infeasible(f"transport LP failed: {res.message}")
    P = res.x.reshape(n, m)
    return Coupling(P, a, b), float(res.fun)


def _jv(C: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Dense shortest-augmenting-path assignment with dual potentials.

    Returns (sigma, u, v) with sigma an optimal row -> col permutation and
    reduced costs C - u[:, None] - v[None, :] >= 0, zero on assigned edges.
    """
    n = C.shape[0]
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.full(n + 1, n)  # p[j] = row matched to column j (n = none)
    way = np.zeros(n + 1, dtype=int)
    for i in range(n):
        p[n] = i
        j0 = n
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[:n]
            cur = C[i0, :n] - u[i0] - v[:n]
            better = free & (cur < minv[:n])
            minv[:n] = np.where(better, cur, minv[:n])
            way[:n][better] = j0
            masked = np.where(free, minv[:n], INF)
            j1 = int(np.argmin(masked))
            delta = masked[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[:n][free] -= delta
            j0 = j1
            if p[j0] == n:
                break
        while j0 != n:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    sigma = np.empty(n, dtype=int)
    sigma[p[:n]] = np.arange(n)
    return sigma, u[:n], v[:n]


def _has_perfect_matching(adj: np.ndarray) -> bool:
    if adj.shape[0] == 0:
        return True
    if not adj.any(axis=1).all() or not adj.any(axis=0).all():
        return False
    match = maximum_bipartite_matching(csr_matrix(adj), perm_type="column")
    return int((match >= 0).sum()) == adj.shape[0]


def _lex_smallest_on_tight(tight: np.ndarray) -> np.ndarray:
    """Lexicographically smallest permutation supported on a boolean matrix
    that is known to admit at least one perfect matching."""
    n = tight.shape[0]
    sigma = np.full(n, -1, dtype=int)
    col_free = np.ones(n, dtype=bool)
    for i in range(n):
        candidates = np.flatnonzero(tight[i] & col_free)
        if candidates.size == 1:
            sigma[i] = candidates[0]
            col_free[candidates[0]] = False
            continue
        for j in candidates:
            col_free[j] = False
            if _has_perfect_matching(tight[i + 1:][:, col_free]):
                sigma[i] = j
                break
            col_free[j] = True
        if sigma[i] < 0:
            raise SwarmotError("tight graph lost its perfect matching")
    return sigma


def solve_matching(cost: CostMatrix) -> tuple[Assignment, float]:
    """Minimum-cost perfect matching on a square cost matrix.

    Among cost-equal optima, the lexicographically smallest permutation is
    returned, so repeated runs and degenerate (duplicate-state) inputs are
    reproducible.
    """
    C = cost.entries
    n, m = C.shape
    if n != m:
        raise NonSquare(f"matching requires a square cost matrix, got {n}x{m}")
    if n == 1:
        return Assignment((0,)), float(C[0, 0])
    sigma, u, v = _jv(C)
    total = float(C[np.arange(n), sigma].sum())
    # restrict to dual-tight edges; any perfect matching there is optimal
    tol = 1e-9 * max(1.0, float(np.abs(C).max()))
    tight = (C - u[:, None] - v[None, :]) <= tol
    # fast path: each row has a single tight column => the optimum is unique
    if not (tight.sum(axis=1) > 1).any():
        return Assignment(tuple(int(j) for j in sigma)), total
    sigma_lex = _lex_smallest_on_tight(tight)
    total_lex = float(C[np.arange(n), sigma_lex].sum())
    return Assignment(tuple(int(j) for j in sigma_lex)), min(total, total_lex)
