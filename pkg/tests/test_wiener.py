import numpy as np
import pytest

from volterra_sde.errors import GridMismatch
from volterra_sde.kernels import (CovarianceQuery, covariance_R, fbm_kernel,
                                  liouville_kernel)
from volterra_sde.sampling import PathGrid, sample_paths
from volterra_sde.wiener import (StepFunction, grid_for, kstar_inner,
                                 kstar_norm_sq, kstar_transform,
                                 verify_isometry, wiener_integral)

INDICATOR_01 = StepFunction(np.array([0.0, 1.0]), np.array([[1.0]]))


class TestStepFunction:
    def test_validation(self):
        with pytest.raises(ValueError):
            StepFunction(np.array([0.0, 0.0]), np.array([[1.0]]))
        with pytest.raises(ValueError):
            StepFunction(np.array([0.0, 1.0]), np.array([[1.0], [2.0]]))


class TestKstar:
    def test_liouville_closed_form(self):
        lk = liouville_kernel(0.25)
        assert kstar_transform(lk, INDICATOR_01, 0.0)[0] == \
            pytest.approx(4.0, rel=1e-12)
        r = 0.3
        assert kstar_transform(lk, INDICATOR_01, r)[0] == \
            pytest.approx((1 - r) ** 0.25 / 0.25, rel=1e-12)

    def test_zero_past_support(self):
        for ker in (fbm_kernel(0.75), liouville_kernel(0.25)):
            assert kstar_transform(ker, INDICATOR_01, 1.5)[0] == 0.0

    def test_zero_integrand(self):
        f0 = StepFunction(np.array([0.0, 1.0]), np.array([[0.0]]))
        assert kstar_transform(fbm_kernel(0.75), f0, 0.2)[0] == 0.0

    def test_liouville_zero_below_support(self):
        lk = liouville_kernel(0.25)
        assert kstar_transform(lk, INDICATOR_01, -0.5)[0] == 0.0


class TestNormIntegral:
    def test_liouville_closed_form(self):
        assert kstar_norm_sq(liouville_kernel(0.25), INDICATOR_01) == \
            pytest.approx(32.0 / 3.0, rel=1e-8)

    def test_fbm_matches_increment_variance(self):
        assert kstar_norm_sq(fbm_kernel(0.75), INDICATOR_01) == \
            pytest.approx(1.0, rel=1e-7)

    def test_step_function_matches_quadratic_form(self):
        rng = np.random.default_rng(0)
        bp = np.array([0.0, 0.5, 1.0, 1.5, 2.0])
        vals = rng.normal(size=(4, 1))
        f = StepFunction(bp, vals)
        for ker in (fbm_kernel(0.75), liouville_kernel(0.25)):
            oracle = sum(
                vals[i, 0] * vals[j, 0] * covariance_R(
                    ker, CovarianceQuery(bp[i], bp[i + 1], bp[j], bp[j + 1]))
                for i in range(4) for j in range(4))
            assert kstar_norm_sq(ker, f) == pytest.approx(oracle, rel=1e-6)

    def test_inner_product_bilinear_form(self):
        ker = fbm_kernel(0.65)
        f = StepFunction(np.array([0.0, 1.0]), np.array([[1.5]]))
        g = StepFunction(np.array([0.5, 1.5]), np.array([[2.0]]))
        oracle = 3.0 * covariance_R(ker, CovarianceQuery(0, 1, 0.5, 1.5))
        assert kstar_inner(ker, f, g) == pytest.approx(oracle, rel=1e-6)


class TestWienerIntegral:
    def test_single_interval_is_raw_increment(self):
        ker = fbm_kernel(0.75)
        grid = PathGrid(0.0, 0.5, 4)
        paths = sample_paths(ker, grid, 1, 10, 3)
        f = StepFunction(np.array([0.0, 0.5]), np.array([[1.0]]))
        got = wiener_integral(f, paths)
        assert np.array_equal(got, paths.values[:, 0, 1] -
                              paths.values[:, 0, 0])

    def test_linearity(self):
        ker = fbm_kernel(0.75)
        grid = PathGrid(0.0, 0.5, 4)
        paths = sample_paths(ker, grid, 1, 10, 3)
        f = StepFunction(np.array([0.0, 1.0, 2.0]),
                         np.array([[1.0], [-2.0]]))
        g = StepFunction(np.array([0.0, 1.0, 2.0]),
                         np.array([[2.0], [-4.0]]))
        assert np.array_equal(2 * wiener_integral(f, paths),
                              wiener_integral(g, paths))

    def test_off_grid_raises(self):
        ker = fbm_kernel(0.75)
        paths = sample_paths(ker, PathGrid(0.0, 0.5, 4), 1, 2, 3)
        f = StepFunction(np.array([0.0, 0.75]), np.array([[1.0]]))
        with pytest.raises(GridMismatch):
            wiener_integral(f, paths)

    def test_dim_mismatch_raises(self):
        ker = fbm_kernel(0.75)
        paths = sample_paths(ker, PathGrid(0.0, 0.5, 4), 2, 2, 3)
        with pytest.raises(GridMismatch):
            wiener_integral(INDICATOR_01, paths)


class TestIsometry:
    def test_fbm_indicator(self):
        rep = verify_isometry(fbm_kernel(0.75), INDICATOR_01, 10000, 5)
        assert rep.passed
        assert rep.rhs_quad == pytest.approx(1.0, rel=1e-7)

    def test_liouville_indicator(self):
        rep = verify_isometry(liouville_kernel(0.25), INDICATOR_01, 10000, 5)
        assert rep.passed
        assert rep.rhs_quad == pytest.approx(32.0 / 3.0, rel=1e-8)

    def test_vector_integrand(self):
        f = StepFunction(np.array([0.0, 0.5, 1.0]),
                         np.array([[1.0, -0.5], [0.25, 2.0]]))
        rep = verify_isometry(fbm_kernel(0.6), f, 8000, 12)
        assert rep.passed

    def test_bilinearity_monte_carlo(self):
        ker = fbm_kernel(0.75)
        rng = np.random.default_rng(2)
        bp = np.array([0.0, 0.5, 1.0, 1.5])
        f = StepFunction(bp, rng.normal(size=(3, 1)))
        g = StepFunction(bp, rng.normal(size=(3, 1)))
        grid = grid_for(f)
        paths = sample_paths(ker, grid, 1, 10000, 8)
        prod = wiener_integral(f, paths) * wiener_integral(g, paths)
        se = prod.std(ddof=1) / np.sqrt(len(prod))
        assert abs(prod.mean() - kstar_inner(ker, f, g)) < 3 * se

    def test_report_text(self):
        rep = verify_isometry(fbm_kernel(0.75), INDICATOR_01, 2000, 5)
        txt = rep.to_text()
        for key in ("lhs_mc=", "rhs_quad=", "stderr=", "z=", "pass="):
            assert key in txt
