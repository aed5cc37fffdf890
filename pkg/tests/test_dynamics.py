"""System builders, state layouts, and integrator tests.

Linear-system trajectories are checked against the matrix-exponential
solution, and cost quadrature against closed-form integrals.
"""

import numpy as np
import pytest
from scipy.linalg import expm

from swarmot import (
    IntegratorConfig,
    LinearSystem,
    QuadraticCost,
    StateLayout,
    double_integrator_3d,
    integrate,
    quadcopter_linearized,
    synthesize_tracker,
)
from swarmot.dynamics import (
    DOUBLE_INTEGRATOR_LAYOUT,
    QUADCOPTER_LAYOUT,
    closed_loop_target,
    output_grid,
)
from swarmot.errors import (
    DimensionMismatch,
    InvalidParameter,
    NonFiniteState,
    StepSizeUnderflow,
)


class TestStateLayout:
    def test_position_extraction(self):
        x = np.arange(6.0)
        assert DOUBLE_INTEGRATOR_LAYOUT.position(x) == pytest.approx([0, 1, 2])
        assert DOUBLE_INTEGRATOR_LAYOUT.extract("velocity", x) == pytest.approx(
            [3, 4, 5])

    def test_batched_extraction(self):
        X = np.arange(24.0).reshape(2, 12)
        pos = QUADCOPTER_LAYOUT.position(X)
        assert pos.shape == (2, 3)
        assert pos[1] == pytest.approx([12, 13, 14])

    def test_slices_must_partition(self):
        with pytest.raises(InvalidParameter):
            StateLayout(dim=4, slices={"position": (0, 2), "velocity": (3, 4)})
        with pytest.raises(InvalidParameter):
            StateLayout(dim=4, slices={"position": (0, 2)})


class TestLinearSystem:
    def test_immutable_arrays(self):
        sys = double_integrator_3d()
        with pytest.raises(ValueError):
            sys.drift[0, 0] = 1.0

    def test_autonomous_flag(self):
        auto = LinearSystem(np.zeros((2, 2)), np.zeros((2, 0)), np.zeros(2))
        assert auto.is_autonomous
        assert not double_integrator_3d().is_autonomous

    def test_shape_validation(self):
        with pytest.raises(DimensionMismatch):
            LinearSystem(np.zeros((2, 3)), np.zeros((2, 1)), np.zeros(2))
        with pytest.raises(DimensionMismatch):
            LinearSystem(np.zeros((2, 2)), np.zeros((2, 1)), np.zeros(3))

    def test_cost_validation(self):
        with pytest.raises(InvalidParameter):
            QuadraticCost([[1.0, 2.0], [0.0, 1.0]], [[1.0]])
        with pytest.raises(InvalidParameter):
            QuadraticCost([[-1.0]], [[1.0]])
        with pytest.raises(InvalidParameter):
            QuadraticCost([[1.0]], [[0.0]])
        # PSD state weight is fine
        QuadraticCost([[0.0]], [[1.0]])


class TestDoubleIntegrator:
    def test_structure(self):
        sys = double_integrator_3d()
        assert sys.state_dim == 6 and sys.input_dim == 3
        x = np.arange(6.0)
        u = np.array([1.0, -1.0, 2.0])
        # position derivative is velocity, velocity derivative is input
        assert sys.rhs(x, u) == pytest.approx(np.concatenate([x[3:], u]))


class TestQuadcopter:
    def test_dimensions_and_sparsity(self):
        sys = quadcopter_linearized()
        assert sys.state_dim == 12 and sys.input_dim == 4
        # drift: 6 kinematic couplings plus 2 gravity tilt terms
        nz = np.nonzero(sys.drift)
        assert len(nz[0]) == 8
        assert sys.drift[6, 4] == pytest.approx(-9.81)
        assert sys.drift[7, 5] == pytest.approx(9.81)
        # each input drives exactly one acceleration channel
        assert np.count_nonzero(sys.input) == 4
        assert sys.input[8, 0] == pytest.approx(-1.0 / 0.1)

    def test_inertia_defaults(self):
        sys = quadcopter_linearized()
        assert sys.input[9, 1] == pytest.approx(1.0 / 0.00062)
        assert sys.input[10, 2] == pytest.approx(1.0 / 0.00113)
        assert sys.input[11, 3] == pytest.approx(1.0 / (0.9 * (0.00062 + 0.00113)))

    def test_parameter_validation(self):
        with pytest.raises(InvalidParameter):
            quadcopter_linearized(mass=0.0)
        with pytest.raises(InvalidParameter):
            quadcopter_linearized(inertia=(1e-3, -1e-3, 1e-3))


class TestClosedLoopTarget:
    def setup_method(self):
        self.plant = double_integrator_3d()
        cost = QuadraticCost(np.diag([1000.0] * 3 + [0.0] * 3), np.eye(3))
        static = LinearSystem(np.zeros((6, 6)), np.zeros((6, 0)), np.zeros(6),
                              layout=self.plant.layout)
        self.policy = synthesize_tracker(self.plant, static, cost)

    def test_autonomous_and_stable(self):
        ref = np.array([5.0, -3.0, 2.0, 0.0, 0.0, 0.0])
        target = closed_loop_target(self.plant, self.policy, ref)
        assert target.is_autonomous
        assert np.linalg.eigvals(target.drift).real.max() < 0
        # the reference is the unique equilibrium
        assert target.rhs(ref) == pytest.approx(np.zeros(6), abs=1e-9)

    def test_converges_to_reference(self):
        ref = np.array([5.0, -3.0, 2.0, 0.0, 0.0, 0.0])
        target = closed_loop_target(self.plant, self.policy, ref)
        y0 = np.array([100.0, 50.0, -20.0, 3.0, -3.0, 1.0])
        traj = integrate(target, None, y0, (0.0, 30.0), IntegratorConfig())
        assert traj.states[-1] == pytest.approx(ref, abs=1e-4)

    def test_reference_shape_checked(self):
        with pytest.raises(DimensionMismatch):
            closed_loop_target(self.plant, self.policy, np.zeros(3))


class TestOutputGrid:
    def test_exact_division(self):
        g = output_grid(0.0, 1.0, 0.1)
        assert g == pytest.approx(np.linspace(0.0, 1.0, 11))

    def test_ragged_final_step(self):
        g = output_grid(0.0, 0.25, 0.1)
        assert g == pytest.approx([0.0, 0.1, 0.2, 0.25])

    def test_endpoint_always_included(self):
        for t1 in (0.999999, 1.0, 1.000001):
            g = output_grid(0.0, t1, 0.01)
            assert g[-1] == pytest.approx(t1, abs=0)


class TestIntegrate:
    def test_matches_matrix_exponential(self):
        rng = np.random.default_rng(5)
        A = rng.normal(size=(4, 4))
        A -= (np.abs(np.linalg.eigvals(A).real).max() + 1.0) * np.eye(4)
        sys = LinearSystem(A, np.zeros((4, 0)), np.zeros(4))
        x0 = rng.normal(size=4)
        cfg = IntegratorConfig(rel_tol=1e-10, abs_tol=1e-12, output_dt=0.1)
        traj = integrate(sys, None, x0, (0.0, 2.0), cfg)
        for t, x in zip(traj.times, traj.states):
            assert x == pytest.approx(expm(A * t) @ x0, rel=1e-7, abs=1e-9)

    def test_affine_offset(self):
        # dx/dt = -x + 1 from 0 has solution 1 - e^{-t}
        sys = LinearSystem([[-1.0]], np.zeros((1, 0)), [1.0])
        traj = integrate(sys, None, np.zeros(1), (0.0, 3.0),
                         IntegratorConfig(rel_tol=1e-10, abs_tol=1e-12))
        assert traj.states[:, 0] == pytest.approx(1 - np.exp(-traj.times),
                                                  rel=1e-7, abs=1e-9)

    def test_scalar_cost_quadrature(self):
        # integral of e^{-2t} over [0, T]
        sys = LinearSystem([[-1.0]], np.zeros((1, 0)), [0.0])
        traj = integrate(
            sys, None, np.ones(1), (0.0, 5.0),
            IntegratorConfig(rel_tol=1e-10, abs_tol=1e-12),
            cost_integrand=lambda t, x: x[0] ** 2,
        )
        assert traj.cost.shape == traj.times.shape
        expected = 0.5 * (1 - np.exp(-2 * traj.times))
        assert traj.cost == pytest.approx(expected, rel=1e-7, abs=1e-9)

    def test_vector_cost_quadrature(self):
        sys = LinearSystem([[-1.0]], np.zeros((1, 0)), [0.0])
        traj = integrate(
            sys, None, np.ones(1), (0.0, 1.0),
            IntegratorConfig(rel_tol=1e-10, abs_tol=1e-12),
            cost_integrand=lambda t, x: np.array([x[0], x[0] ** 2]),
        )
        assert traj.cost.shape == (traj.times.size, 2)
        assert traj.cost[-1, 0] == pytest.approx(1 - np.exp(-1.0), rel=1e-7)
        assert traj.cost[-1, 1] == pytest.approx(0.5 * (1 - np.exp(-2.0)), rel=1e-7)

    def test_controls_recorded(self):
        sys = double_integrator_3d()
        law = lambda t, x: np.array([1.0, 0.0, 0.0])
        traj = integrate(sys, law, np.zeros(6), (0.0, 1.0), IntegratorConfig())
        assert traj.controls.shape == (traj.times.size, 3)
        assert traj.controls[:, 0] == pytest.approx(1.0)

    def test_blowup_detected(self):
        # finite-time escape must surface as a typed error, not garbage output
        with pytest.raises((StepSizeUnderflow, NonFiniteState)):
            integrate(lambda t, x: x ** 3, None, np.array([10.0]), (0.0, 10.0),
                      IntegratorConfig())

    def test_invalid_span_and_state(self):
        sys = double_integrator_3d()
        with pytest.raises(InvalidParameter):
            integrate(sys, None, np.zeros(6), (1.0, 1.0), IntegratorConfig())
        with pytest.raises(DimensionMismatch):
            integrate(sys, None, np.zeros(5), (0.0, 1.0), IntegratorConfig())

    def test_config_validation(self):
        with pytest.raises(InvalidParameter):
            IntegratorConfig(rel_tol=-1e-6)
        with pytest.raises(InvalidParameter):
            IntegratorConfig(output_dt=0.0)
