import numpy as np
import pytest
from scipy.special import gamma as gamma_fn

from volterra_sde.errors import (ConditionHViolated, EmptyWindow,
                                 InsufficientSamples,
                                 MissingLipschitzConstant)
from volterra_sde.ergodicity import (Functional, batch_means_stderr,
                                     check_condition_H,
                                     condition_H_closed_form,
                                     convolution_variance,
                                     ergodic_test_arbitrary,
                                     ergodic_test_stationary,
                                     heat_eigenvalues, i1_transient_bound,
                                     invariant_covariance,
                                     scheme_stationary_variance,
                                     stationarity_test, time_average)
from volterra_sde.kernels import fbm_kernel, liouville_kernel
from volterra_sde.operators import (LiftedState, SpectralSystem,
                                    scalar_system,
                                    solve_deterministic_neutral)

KER = fbm_kernel(0.75)


def fou_variance(lam, hurst):
    # stationary variance of the fractional Ornstein-Uhlenbeck process
    return 0.5 * gamma_fn(2 * hurst + 1) * lam ** (-2 * hurst)


class TestFunctional:
    def test_kinds(self):
        x = np.array([1.0, -2.0])
        lin = Functional("linear", np.array([2.0, 1.0]))
        quad = Functional("quadratic", np.array([1.0, 0.5]))
        clip = Functional("clipped", np.array([2.0, 1.0]), clip=1.5)
        assert lin.evaluate(x) == pytest.approx(0.0)
        assert quad.evaluate(x) == pytest.approx(3.0)
        assert clip.evaluate(x) == pytest.approx(0.0)
        assert clip.evaluate(np.array([5.0, 0.0])) == pytest.approx(1.5)

    def test_space_average(self):
        Q = np.diag([0.5, 2.0])
        quad = Functional("quadratic", np.array([1.0, 3.0]))
        assert quad.space_average(Q) == pytest.approx(6.5)
        lin = Functional("linear", np.array([1.0, 1.0]))
        assert lin.space_average(Q) == 0.0

    def test_validation(self):
        with pytest.raises(ValueError):
            Functional("cubic", np.array([1.0]))
        with pytest.raises(ValueError):
            Functional("clipped", np.array([1.0]))


class TestConditionH:
    def test_single_mode_closed_form(self):
        alpha = 0.25
        for lam, b, T0 in [(1.0, 1.0, 5.0), (2.0, 0.7, 3.0),
                           (0.5, 2.0, 10.0)]:
            sys = scalar_system(lam, b=b)
            got = check_condition_H(sys, alpha, T0)
            ref = condition_H_closed_form(lam, b, alpha, T0)
            assert got == pytest.approx(ref, abs=1e-10 * max(ref, 1.0))

    def test_zero_noise(self):
        sys = scalar_system(1.0, b=0.0)
        assert check_condition_H(sys, 0.25, 5.0) == 0.0

    def test_heat_truncations_cauchy(self):
        alpha = 0.25
        vals = []
        for N in (4, 8, 16, 32):
            sys = SpectralSystem(heat_eigenvalues(N), 1.0,
                                 None, None, None, None, np.eye(N))
            vals.append(check_condition_H(sys, alpha, 2.0))
        vals = np.array(vals)
        gaps = np.diff(vals)
        assert np.all(vals[1:] > vals[:-1])
        assert np.all(gaps[1:] < gaps[:-1])

    def test_invalid_horizon(self):
        with pytest.raises(ValueError):
            check_condition_H(scalar_system(1.0), 0.25, 0.0)


class TestInvariantCovariance:
    def test_fou_oracle(self):
        for lam in (1.0, 2.0):
            for hurst in (0.6, 0.75):
                sys = scalar_system(lam)
                Q = invariant_covariance(sys, fbm_kernel(hurst))
                assert Q[0, 0] == pytest.approx(fou_variance(lam, hurst),
                                                rel=1e-6)

    def test_decreasing_in_damping(self):
        q = [invariant_covariance(scalar_system(lam), KER)[0, 0]
             for lam in (0.5, 1.0, 2.0, 4.0)]
        assert np.all(np.diff(q) < 0)

    def test_diagonal_system_psd(self):
        sys = SpectralSystem(np.array([1.0, 3.0]), 1.0,
                             None, None, None, None,
                             np.array([[1.0, 0.5], [0.0, 2.0]]))
        Q = invariant_covariance(sys, KER)
        assert np.all(np.linalg.eigvalsh(Q) >= 0)
        assert Q[0, 1] == pytest.approx(Q[1, 0])

    def test_delay_system_rejected(self):
        with pytest.raises(ValueError):
            invariant_covariance(scalar_system(1.0, d1=0.3), KER)

    def test_nonstationary_kernel_rejected(self):
        with pytest.raises(ValueError):
            invariant_covariance(scalar_system(1.0), liouville_kernel(0.25))


class TestVarianceFormulas:
    def test_convolution_approaches_invariant(self):
        lam = 1.0
        q = invariant_covariance(scalar_system(lam), KER)[0, 0]
        v = convolution_variance(lam, KER, 40.0)
        assert v == pytest.approx(q, rel=1e-4)

    def test_convolution_grows_with_horizon(self):
        v1 = convolution_variance(1.0, KER, 0.5)
        v2 = convolution_variance(1.0, KER, 2.0)
        assert 0 < v1 < v2

    def test_scheme_variance_approaches_invariant(self):
        lam = 1.0
        q = invariant_covariance(scalar_system(lam), KER)[0, 0]
        errs = [abs(scheme_stationary_variance(lam, 1.0, KER, dt) - q)
                for dt in (0.2, 0.1, 0.05)]
        # first-order bias: halving dt should roughly halve the error
        assert errs[0] > errs[1] > errs[2]
        assert errs[0] / errs[2] > 2.5
        assert errs[-1] < 0.1 * q

    def test_lifted_scheme_drops_transport_factor(self):
        lam, dt = 1.0, 0.1
        direct = scheme_stationary_variance(lam, 1.0, KER, dt)
        lifted = scheme_stationary_variance(lam, 1.0, KER, dt, lifted=True)
        assert direct / lifted == pytest.approx(np.exp(-2 * lam * dt),
                                                rel=1e-12)

    def test_i1_bound_formula(self):
        L, d, rho, T = 2.0, 1.5, 0.8, 10.0
        assert i1_transient_bound(L, d, rho, T) == \
            L * d * (1.0 - np.exp(-rho * T)) / (rho * T)


class TestAverages:
    def test_constant_trajectory(self):
        sys = scalar_system(1.0, f1=1.0)  # F x(-r) = x balances -x exactly
        traj = solve_deterministic_neutral(sys, np.array([2.0]),
                                           np.array([2.0]), 4.0, 0.25)
        rho = Functional("linear", np.array([1.0]))
        assert time_average(traj, rho, 0.0) == pytest.approx(2.0, rel=1e-12)

    def test_empty_window(self):
        sys = scalar_system(1.0)
        traj = solve_deterministic_neutral(sys, np.array([1.0]),
                                           np.array([1.0]), 1.0, 0.25)
        rho = Functional("linear", np.array([1.0]))
        with pytest.raises(EmptyWindow):
            time_average(traj, rho, 5.0)

    def test_batch_means_iid_scale(self):
        rng = np.random.default_rng(0)
        vals = rng.standard_normal(20000)
        se = batch_means_stderr(vals)
        assert se == pytest.approx(1.0 / np.sqrt(20000), rel=0.5)

    def test_batch_means_short_series(self):
        with pytest.raises(InsufficientSamples):
            batch_means_stderr(np.ones(5), n_batches=20)


class TestErgodicStationary:
    def test_quadratic_functional_passes(self):
        sys = scalar_system(1.0)
        rho = Functional("quadratic", np.array([1.0]))
        rep = ergodic_test_stationary(sys, KER, rho, 60.0, 0.1, 6, 42)
        assert rep.passed
        assert rep.rho == pytest.approx(1.0, rel=0.1)
        assert rep.space_average == pytest.approx(fou_variance(1.0, 0.75),
                                                  rel=1e-4)

    def test_report_outputs(self):
        sys = scalar_system(1.0)
        rho = Functional("linear", np.array([1.0]))
        rep = ergodic_test_stationary(sys, KER, rho, 30.0, 0.1, 4, 1)
        txt = rep.to_text()
        for key in ("time_average=", "space_average=", "stderr=", "pass="):
            assert key in txt
        csv = rep.running_csv()
        assert csv.startswith("T,running_avg,reference,z")
        assert len(csv.strip().split("\n")) == 1 + len(rep.horizons)

    def test_too_few_paths(self):
        sys = scalar_system(1.0)
        rho = Functional("quadratic", np.array([1.0]))
        with pytest.raises(InsufficientSamples):
            ergodic_test_stationary(sys, KER, rho, 10.0, 0.1, 1, 0)

    def test_unstable_system_rejected(self):
        sys = scalar_system(1.0, f1=10.0)
        rho = Functional("quadratic", np.array([1.0]))
        with pytest.raises(ConditionHViolated):
            ergodic_test_stationary(sys, KER, rho, 10.0, 0.1, 4, 0)


class TestErgodicArbitrary:
    def test_missing_lipschitz(self):
        sys = scalar_system(1.0)
        rho = Functional("clipped", np.array([1.0]), clip=2.0)
        x0 = LiftedState(head=np.array([3.0]), segment=np.full((2, 1), 3.0))
        with pytest.raises(MissingLipschitzConstant):
            ergodic_test_arbitrary(sys, KER, x0, rho, 10.0, 0.1, 4, 0)

    def test_transient_within_bound(self):
        sys = scalar_system(1.0)
        rho = Functional("clipped", np.array([1.0]), clip=2.0,
                         lipschitz_constant=1.0)
        x0 = LiftedState(head=np.array([3.0]), segment=np.full((11, 1), 3.0))
        rep = ergodic_test_arbitrary(sys, KER, x0, rho, 40.0, 0.1, 6, 7)
        assert rep.i1_passed
        assert rep.passed
        assert rep.i1_bound > 0
        assert rep.space_average == 0.0


class TestStationarityTest:
    def test_stationary_start_passes(self):
        sys = scalar_system(1.0)
        rep = stationarity_test(sys, KER, 30.0, 0.1, 48, 4, 11)
        assert rep.passed
        assert "pass=true" in rep.to_text()

    def test_transient_start_fails(self):
        sys = scalar_system(1.0)
        rep = stationarity_test(sys, KER, 30.0, 0.1, 48, 4, 11,
                                initial_head=np.array([10.0]))
        assert not rep.passed

    def test_too_few_paths(self):
        sys = scalar_system(1.0)
        with pytest.raises(InsufficientSamples):
            stationarity_test(sys, KER, 10.0, 0.1, 1, 4, 0)
