"""Riccati solver and tracking-policy tests.

The central oracle is trajectory quadrature: the closed-form cost-to-go
must match the integrated stage cost of the simulated optimal trajectory.
"""

import numpy as np
import pytest

from swarmot import (
    IntegratorConfig,
    LinearSystem,
    QuadraticCost,
    double_integrator_3d,
    integrate,
    solve_care,
    synthesize_tracker,
)
from swarmot.dynamics import closed_loop_target, quadcopter_linearized
from swarmot.errors import (
    DimensionMismatch,
    InvalidParameter,
    NotStabilizable,
    SteadyStateUndefined,
)
from swarmot.riccati import care_residual, cost_to_go


def random_stabilizable(rng, d, du):
    A = rng.normal(size=(d, d))
    B = rng.normal(size=(d, du))
    Qh = rng.normal(size=(d, d))
    return A, B, QuadraticCost(Qh @ Qh.T, np.eye(du))


def rel_residual(A, B, cost, P):
    return care_residual(A, B, cost.state_weight, cost.control_weight, P) / (
        1.0 + np.linalg.norm(P)
    )


class TestSolveCare:
    def test_scalar(self):
        P = solve_care(np.array([[0.0]]), np.array([[1.0]]),
                       QuadraticCost([[1.0]], [[1.0]]))
        assert P == pytest.approx(np.array([[1.0]]))

    def test_double_integrator_closed_form(self):
        A = np.array([[0.0, 1.0], [0.0, 0.0]])
        B = np.array([[0.0], [1.0]])
        P = solve_care(A, B, QuadraticCost(np.eye(2), [[1.0]]))
        s3 = np.sqrt(3.0)
        assert P == pytest.approx(np.array([[s3, 1.0], [1.0, s3]]), rel=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_random_residual(self, seed):
        rng = np.random.default_rng(seed)
        A, B, cost = random_stabilizable(rng, 6, 2)
        P = solve_care(A, B, cost)
        assert rel_residual(A, B, cost, P) <= 1e-9
        assert np.allclose(P, P.T)
        assert np.linalg.eigvalsh(P).min() >= -1e-8 * (1 + np.linalg.norm(P))

    def test_not_stabilizable(self):
        # unstable mode with no control authority
        A = np.diag([1.0, -1.0])
        B = np.array([[0.0], [1.0]])
        with pytest.raises(NotStabilizable):
            solve_care(A, B, QuadraticCost(np.eye(2), [[1.0]]))

    def test_not_detectable(self):
        # unstable mode invisible to the cost
        A = np.diag([1.0, -1.0])
        B = np.eye(2)
        Q = np.diag([0.0, 1.0])
        with pytest.raises(NotStabilizable):
            solve_care(A, B, QuadraticCost(Q, np.eye(2)))


def static_system(d, layout=None):
    return LinearSystem(np.zeros((d, d)), np.zeros((d, 0)), np.zeros(d),
                        layout=layout)


def di_cost():
    return QuadraticCost(np.diag([1000.0] * 3 + [0.0] * 3), np.eye(3))


class TestSynthesizeTracker:
    def test_regulator_special_case(self):
        agent = LinearSystem([[0.0]], [[1.0]], [0.0])
        target = static_system(1)
        pol = synthesize_tracker(agent, target, QuadraticCost([[1.0]], [[1.0]]))
        assert pol.gain == pytest.approx(np.array([[1.0]]))
        assert pol.feedforward(np.zeros(1)) == pytest.approx(np.zeros(1))
        e_ss, u_ss, _, _ = pol._steady(np.zeros(1))
        assert e_ss == pytest.approx(np.zeros(1))
        assert u_ss == pytest.approx(np.zeros(1))

    def test_scalar_integrator_cost(self):
        # LQR value x0' P x0 with P = 1
        agent = LinearSystem([[0.0]], [[1.0]], [0.0])
        pol = synthesize_tracker(agent, static_system(1),
                                 QuadraticCost([[1.0]], [[1.0]]))
        assert pol.cost_to_go(np.array([1.0]), np.array([0.0])) == pytest.approx(1.0)

    def test_regulator_reduction(self):
        # static target at the origin: cost_to_go == x0' P x0
        rng = np.random.default_rng(3)
        agent = double_integrator_3d()
        pol = synthesize_tracker(agent, static_system(6, agent.layout), di_cost())
        for _ in range(5):
            x0 = rng.normal(size=6) * 100
            expected = float(x0 @ pol.riccati_solution @ x0)
            assert pol.cost_to_go(x0, np.zeros(6)) == pytest.approx(
                expected, rel=1e-9)

    def test_closed_loop_stable(self):
        agent = double_integrator_3d()
        pol = synthesize_tracker(agent, static_system(6, agent.layout), di_cost())
        eigs = np.linalg.eigvals(pol.closed_loop_drift)
        assert eigs.real.max() < 0

    def test_quadcopter_pair_stable(self):
        plant = quadcopter_linearized()
        cost = QuadraticCost(np.diag([1000.0] * 6 + [0.0] * 6), np.eye(4))
        ref_pol = synthesize_tracker(plant, static_system(12, plant.layout), cost)
        ref = np.zeros(12)
        ref[:3] = [10.0, -20.0, 5.0]
        target = closed_loop_target(plant, ref_pol, ref)
        pol = synthesize_tracker(plant, target, cost)
        assert np.linalg.eigvals(pol.closed_loop_drift).real.max() < 0
        assert np.linalg.eigvals(target.drift).real.max() < 0

    def test_tracking_converges(self):
        # 3-D double integrator agent vs. target tracking a fixed point
        agent = double_integrator_3d()
        cost = di_cost()
        ref_pol = synthesize_tracker(agent, static_system(6, agent.layout), cost)
        ref = np.array([50.0, -30.0, 10.0, 0.0, 0.0, 0.0])
        target = closed_loop_target(agent, ref_pol, ref)
        pol = synthesize_tracker(agent, target, cost)
        x0 = np.array([-200.0, 100.0, 0.0, 40.0, -10.0, 5.0])
        y0 = np.array([100.0, 0.0, -50.0, 5.0, 5.0, 5.0])

        def deriv(t, z):
            x, y = z[:6], z[6:]
            u = pol.control(x, y)
            return np.concatenate([agent.rhs(x, u), target.rhs(y)])

        traj = integrate(deriv, None, np.concatenate([x0, y0]), (0.0, 10.0),
                         IntegratorConfig())
        err = traj.states[-1, :3] - traj.states[-1, 6:9]
        assert np.linalg.norm(err) < 1e-3

    def test_steady_state_undefined(self):
        agent = LinearSystem([[0.0]], [[1.0]], [0.0])
        drifting = LinearSystem([[0.0]], np.zeros((1, 0)), [1.0])
        with pytest.raises(SteadyStateUndefined):
            synthesize_tracker(agent, drifting, QuadraticCost([[1.0]], [[1.0]]))

    def test_target_must_be_autonomous(self):
        agent = double_integrator_3d()
        with pytest.raises(InvalidParameter):
            synthesize_tracker(agent, agent, di_cost())

    def test_dimension_mismatch(self):
        agent = double_integrator_3d()
        with pytest.raises(DimensionMismatch):
            synthesize_tracker(agent, static_system(4), di_cost())


def quadrature_cost(agent, target, pol, x0, y0, horizon=20.0):
    d = agent.state_dim

    def deriv(t, z):
        x, y = z[:d], z[d:]
        u = pol.control(x, y)
        return np.concatenate([agent.rhs(x, u), target.rhs(y)])

    def integrand(t, z):
        x, y = z[:d], z[d:]
        return pol.stage_cost(x, pol.control(x, y), y)

    cfg = IntegratorConfig(rel_tol=1e-10, abs_tol=1e-10)
    traj = integrate(deriv, None, np.concatenate([x0, y0]), (0.0, horizon),
                     cfg, cost_integrand=integrand)
    # horizon must be long enough that the stage cost has decayed
    final_stage = integrand(horizon, traj.states[-1])
    assert abs(final_stage) < 1e-6
    return float(traj.cost[-1])


class TestCostConsistency:
    """Closed form vs. integrated stage cost, the module's central oracle."""

    @pytest.mark.parametrize("seed", range(8))
    def test_double_integrator_pairs(self, seed):
        rng = np.random.default_rng(seed)
        agent = double_integrator_3d()
        cost = di_cost()
        ref_pol = synthesize_tracker(agent, static_system(6, agent.layout), cost)
        ref = np.zeros(6)
        ref[:3] = rng.uniform(-1000, 1000, 3)
        target = closed_loop_target(agent, ref_pol, ref)
        pol = synthesize_tracker(agent, target, cost)
        x0 = np.concatenate([rng.uniform(-1000, 1000, 3),
                             rng.uniform(-5000, 5000, 3)])
        y0 = np.concatenate([rng.uniform(-1000, 1000, 3),
                             rng.uniform(-1000, 1000, 3)])
        closed = pol.cost_to_go(x0, y0)
        quad = quadrature_cost(agent, target, pol, x0, y0)
        assert abs(closed - quad) <= 1e-2 * (1.0 + abs(closed))

    def test_zero_at_joint_steady_state(self):
        agent = double_integrator_3d()
        cost = di_cost()
        ref_pol = synthesize_tracker(agent, static_system(6, agent.layout), cost)
        ref = np.array([10.0, 20.0, -5.0, 0.0, 0.0, 0.0])
        target = closed_loop_target(agent, ref_pol, ref)
        pol = synthesize_tracker(agent, target, cost)
        y_ss = pol.target_steady_state
        x_ss = pol.steady_state_error + y_ss
        assert pol.cost_to_go(x_ss, y_ss) == pytest.approx(0.0, abs=1e-6)

    def test_cost_to_go_wrapper_and_dims(self):
        agent = double_integrator_3d()
        pol = synthesize_tracker(agent, static_system(6, agent.layout), di_cost())
        x = np.zeros(6)
        assert cost_to_go(pol, x, x) == pytest.approx(0.0)
        with pytest.raises(DimensionMismatch):
            pol.cost_to_go(np.zeros(5), x)
