"""Capability-aware swarm-to-swarm assignment via discrete optimal transport.

Assignment costs are the optimal 1v1 linear-quadratic tracking costs, so
the matching accounts for the dynamics of every agent/target pair instead
of plain Euclidean distance.
"""

from .systems import LinearSystem, QuadraticCost, StateLayout
from .riccati import TrackingPolicy, solve_care, synthesize_tracker, cost_to_go
from .dynamics import (
    IntegratorConfig,
    Trajectory,
    closed_loop_target,
    double_integrator_3d,
    integrate,
    quadcopter_linearized,
)
from .transport import (
    Assignment,
    CostMatrix,
    Coupling,
    DiscreteMeasure,
    dynamics_cost,
    euclidean_cost,
    solve_kantorovich,
    solve_matching,
)
from .engine import (
    EngagementConfig,
    SimulationTrace,
    SwarmState,
    assign,
    capture_check,
    run_dynamics_policy,
    run_emd_policy,
)
from .scenarios import (
    MonteCarloReport,
    Scenario,
    ScenarioSpec,
    default_engagement,
    derive_run_seed,
    generate,
    monte_carlo,
)

__version__ = "0.1.0"
