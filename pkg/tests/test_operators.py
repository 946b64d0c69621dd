import numpy as np
import pytest

from volterra_sde.errors import (NegativeTime, SegmentUnderflow,
                                 StepLargerThanDelay)
from volterra_sde.operators import (LiftedState, SpectralSystem, apply_D,
                                    apply_F, apply_semigroup,
                                    estimate_stability, fundamental_solution,
                                    lifted_semigroup, scalar_system,
                                    solve_deterministic_neutral,
                                    trapezoid_weights)


def const_state(sys, head, seg_value, n_slots):
    seg = np.full((n_slots, sys.dim), seg_value, dtype=float)
    return LiftedState(head=np.full(sys.dim, head, dtype=float), segment=seg)


class TestSemigroup:
    def test_identity_at_zero(self):
        sys = SpectralSystem(np.array([1.0, 4.0, 9.0]), 1.0,
                             None, None, None, None, 1.0)
        x = np.array([1.0, -2.0, 0.5])
        assert np.array_equal(apply_semigroup(sys, 0.0, x), x)

    def test_exponential_decay(self):
        sys = scalar_system(2.0)
        assert apply_semigroup(sys, 0.5, np.array([3.0]))[0] == \
            pytest.approx(3.0 * np.exp(-1.0), rel=1e-14)

    def test_contraction(self):
        sys = SpectralSystem(np.array([1.0, 4.0]), 1.0,
                             None, None, None, None, 1.0)
        x = np.array([1.0, 1.0])
        n0 = np.linalg.norm(x)
        for t in (0.1, 1.0, 5.0):
            assert np.linalg.norm(apply_semigroup(sys, t, x)) <= n0

    def test_negative_time_raises(self):
        sys = scalar_system(1.0)
        with pytest.raises(NegativeTime):
            apply_semigroup(sys, -0.1, np.array([1.0]))


class TestDelayOperators:
    def test_point_part_reads_oldest_slot(self):
        sys = scalar_system(1.0, d1=0.3, f1=0.5)
        seg = np.array([[2.0], [5.0], [7.0]])
        assert apply_D(sys, seg)[0] == pytest.approx(0.6, abs=1e-15)
        assert apply_F(sys, seg)[0] == pytest.approx(1.0, abs=1e-15)

    def test_distributed_part_exact_on_constant(self):
        # trapezoid over [-r, 0] integrates a constant segment exactly
        sys = scalar_system(1.0, delay_r=2.0, d2=0.4)
        seg = np.full((9, 1), 3.0)
        assert apply_D(sys, seg)[0] == pytest.approx(0.4 * 2.0 * 3.0,
                                                     rel=1e-14)

    def test_distributed_part_exact_on_linear(self):
        # trapezoid is exact for affine segments as well
        sys = scalar_system(1.0, delay_r=1.0, f2=1.0)
        theta = np.linspace(-1.0, 0.0, 5)
        seg = (2.0 + theta).reshape(-1, 1)
        assert apply_F(sys, seg)[0] == pytest.approx(1.5, rel=1e-14)

    def test_segment_validation(self):
        sys = scalar_system(1.0, d1=0.3)
        with pytest.raises(SegmentUnderflow):
            apply_D(sys, np.array([[1.0]]))
        with pytest.raises(SegmentUnderflow):
            apply_D(sys, np.ones((3, 2)))

    def test_trapezoid_weights(self):
        w = trapezoid_weights(5, 0.25)
        assert w.sum() == pytest.approx(1.0, rel=1e-15)
        assert w[0] == w[-1] == 0.125


class TestSystemValidation:
    def test_nonpositive_eigenvalue_rejected(self):
        with pytest.raises(ValueError):
            scalar_system(0.0)
        with pytest.raises(ValueError):
            scalar_system(-1.0)

    def test_nonpositive_delay_rejected(self):
        with pytest.raises(ValueError):
            scalar_system(1.0, delay_r=0.0)

    def test_scalar_shorthand_matrices(self):
        sys = SpectralSystem(np.array([1.0, 2.0]), 1.0,
                             0.3, None, None, None, 2.0)
        assert np.array_equal(sys.D1, 0.3 * np.eye(2))
        assert np.array_equal(sys.F1, np.zeros((2, 2)))
        assert sys.noise_dim == 2
        assert sys.coercivity_rate == 1.0
        assert sys.has_D


class TestDeterministicSolver:
    def test_pure_semigroup(self):
        # with no delay operators the march reduces to exact decay steps
        sys = scalar_system(1.5)
        traj = solve_deterministic_neutral(sys, np.array([2.0]),
                                           np.array([2.0]), 2.0, 1 / 32)
        t = np.arange(65) / 32
        assert np.allclose(traj.forward_states()[:, 0],
                           2.0 * np.exp(-1.5 * t), rtol=1e-12)

    def test_method_of_steps_first_interval(self):
        # constant history makes the drift constant on [0, r], where the
        # exponential-Euler step is exact
        lam, f1, phi = 1.3, 0.7, 2.0
        sys = scalar_system(lam, delay_r=1.0, f1=f1)
        traj = solve_deterministic_neutral(sys, np.array([phi]),
                                           np.array([phi]), 1.0, 1 / 16)
        t = np.arange(17) / 16
        exact = (phi * np.exp(-lam * t)
                 + (f1 * phi / lam) * (1 - np.exp(-lam * t)))
        assert np.allclose(traj.forward_states()[:, 0], exact, rtol=1e-12)

    def test_history_stored_on_negative_times(self):
        sys = scalar_system(1.0, d1=0.2)
        hist = np.linspace(1.0, 2.0, 5).reshape(-1, 1)
        traj = solve_deterministic_neutral(sys, np.array([0.5]), hist,
                                           1.0, 0.25)
        assert np.array_equal(traj.states[:4], hist[:4])
        # the t = 0 slot is recovered from the head: x(0) = v(0) + D x_0
        assert traj.states[4, 0] == pytest.approx(0.5 + 0.2 * hist[0, 0],
                                                  abs=1e-15)
        assert traj.delay_slots == 4

    def test_neutral_recovery_identity(self):
        # x(t) - D x_t must reproduce the stored head on every slot
        sys = scalar_system(1.0, d1=0.3, f1=0.5, d2=0.2)
        traj = solve_deterministic_neutral(sys, np.array([1.0]),
                                           np.array([1.0]), 2.0, 1 / 8)
        m = traj.delay_slots
        for k in range(len(traj.head)):
            seg = traj.states[k:k + m + 1]
            v = traj.states[m + k] - apply_D(sys, seg, traj.grid.dt)
            assert v[0] == pytest.approx(traj.head[k, 0], abs=1e-13)

    def test_first_order_self_convergence(self):
        sys = scalar_system(1.0, d1=0.3, f1=0.5)
        phi0, phi1 = np.array([0.7]), np.array([1.0])

        def run(dt):
            return solve_deterministic_neutral(sys, phi0, phi1, 3.0, dt)

        ref = run(1 / 256).forward_states()[:, 0]
        errs = []
        for k in (8, 16, 32):
            got = run(1 / k).forward_states()[:, 0]
            errs.append(np.max(np.abs(got - ref[::256 // k])))
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(orders > 0.8)

    def test_incommensurate_grid_rejected(self):
        sys = scalar_system(1.0, d1=0.3)
        with pytest.raises(ValueError):
            solve_deterministic_neutral(sys, np.array([1.0]),
                                        np.array([1.0]), 1.0, 0.3)

    def test_step_larger_than_delay(self):
        sys = scalar_system(1.0, delay_r=0.5, d1=0.3)
        with pytest.raises(StepLargerThanDelay):
            solve_deterministic_neutral(sys, np.array([1.0]),
                                        np.array([1.0]), 2.0, 1.0)


class TestFundamentalSolution:
    def test_zero_for_negative_time(self):
        sys = scalar_system(1.0, d1=0.3)
        assert np.array_equal(
            fundamental_solution(sys, -0.5, np.array([1.0]), 0.25),
            np.zeros(1))

    def test_identity_at_zero(self):
        sys = scalar_system(1.0, d1=0.3)
        h = np.array([2.5])
        assert np.array_equal(fundamental_solution(sys, 0.0, h, 0.25), h)

    def test_reduces_to_semigroup(self):
        sys = scalar_system(2.0)
        got = fundamental_solution(sys, 1.5, np.array([1.0]), 1 / 64)
        assert got[0] == pytest.approx(np.exp(-3.0), rel=1e-10)


class TestLiftedSemigroup:
    def test_identity_at_zero(self):
        sys = scalar_system(1.0, d1=0.3)
        phi = const_state(sys, 1.0, 0.5, 5)
        out = lifted_semigroup(sys, 0.0, phi, 0.25)
        assert out is phi

    def test_negative_time_raises(self):
        sys = scalar_system(1.0)
        phi = const_state(sys, 1.0, 0.5, 5)
        with pytest.raises(NegativeTime):
            lifted_semigroup(sys, -1.0, phi, 0.25)

    def test_semigroup_property(self):
        sys = scalar_system(1.0, d1=0.3, f1=0.5)
        dt = 1 / 64
        rng = np.random.default_rng(7)
        for _ in range(5):
            phi = LiftedState(head=rng.standard_normal(1),
                              segment=rng.standard_normal((65, 1)))
            t = dt * rng.integers(1, 32)
            s = dt * rng.integers(1, 32)
            one = lifted_semigroup(sys, t + s, phi, dt)
            two = lifted_semigroup(
                sys, t, lifted_semigroup(sys, s, phi, dt), dt)
            diff = LiftedState(head=one.head - two.head,
                               segment=one.segment - two.segment)
            assert diff.norm(sys.delay_r) <= 10 * dt * phi.norm(sys.delay_r)

    def test_no_delay_head_is_semigroup(self):
        sys = scalar_system(2.0)
        phi = const_state(sys, 1.0, 1.0, 5)
        out = lifted_semigroup(sys, 1.0, phi, 0.25)
        assert out.head[0] == pytest.approx(np.exp(-2.0), rel=1e-12)


class TestStability:
    def test_pure_mode_rate(self):
        sys = scalar_system(2.0)
        est = estimate_stability(sys, 6.0, 1 / 32, 3, 0)
        assert est.decays
        assert est.rho == pytest.approx(2.0, rel=0.05)

    def test_small_drift_delay_decays(self):
        sys = scalar_system(1.0, d1=0.3, f1=0.5)
        est = estimate_stability(sys, 12.0, 1 / 16, 4, 1)
        assert est.decays
        assert est.rho > 0.05

    def test_large_feedback_does_not_decay(self):
        sys = scalar_system(1.0, f1=10.0)
        est = estimate_stability(sys, 12.0, 1 / 16, 4, 1)
        assert not est.decays

    def test_report_text(self):
        est = estimate_stability(scalar_system(1.0), 4.0, 1 / 8, 2, 0)
        txt = est.to_text()
        assert "M=" in txt and "rho=" in txt and "decays=true" in txt


class TestLiftedStateNorm:
    def test_constant_segment(self):
        seg = np.full((5, 1), 3.0)
        phi = LiftedState(head=np.array([4.0]), segment=seg)
        # ||phi||^2 = 16 + int_{-2}^0 9 = 34
        assert phi.norm(2.0) == pytest.approx(np.sqrt(34.0), rel=1e-14)
