import math

import numpy as np
import pytest

from endowsale import (AgentState, IllPosedError, ModelParams, Regime,
                       build_surface, build_threshold_surface, eval_W, eval_g,
                       eval_g1, eval_g2, eval_w, hjb_residual, slope_bound_gap,
                       value_function, wode_residual)

SQRT5 = math.sqrt(5.0)


def one_sided_limit(f, z0, d, side):
    """Quadratic extrapolation of f to z0 from one side (step d)."""
    s = 1.0 if side > 0 else -1.0
    return 3 * f(z0 + s * d) - 3 * f(z0 + 2 * s * d) + f(z0 + 3 * s * d)


class TestWMap:
    def test_inverse_identity_on_grid(self, thresh_R05, thresh_R2):
        for surf in (thresh_R05, thresh_R2):
            nc = surf.ncurve
            sel = slice(1, -1)
            W = np.asarray(eval_W(surf, nc.N[sel]))
            assert np.max(np.abs(W - nc.q[sel])) < 1e-12

    def test_W_at_one(self, thresh_R05, thresh_R2):
        assert eval_W(thresh_R05, 1.0) == pytest.approx(0.0, abs=1e-12)
        assert eval_W(thresh_R2, 1.0) == pytest.approx(0.0, abs=1e-12)

    def test_domain_error(self, thresh_R05):
        with pytest.raises(ValueError):
            eval_W(thresh_R05, 0.99)  # below the admissible interval for R < 1
        with pytest.raises(ValueError):
            eval_W(thresh_R05, thresh_R05.h_star * 1.01)

    def test_w_definition(self, thresh_R05):
        v = np.linspace(1.0, thresh_R05.h_star, 37)
        w = np.asarray(eval_w(thresh_R05, v))
        W = np.asarray(eval_W(thresh_R05, v))
        assert np.allclose(w, v * 0.5 * W, rtol=1e-14, atol=1e-14)

    def test_wode_residual(self, thresh_R05, thresh_R2):
        # centered differences on the interpolant, per the stated check
        for surf in (thresh_R05, thresh_R2):
            lo, hi = (1.0, surf.h_star) if surf.params.R < 1 else (surf.h_star, 1.0)
            v = np.linspace(lo, hi, 202)[1:-1]
            assert np.max(np.abs(wode_residual(surf, v))) < 1e-6

    def test_slope_bound(self, thresh_R05, thresh_R2):
        for surf in (thresh_R05, thresh_R2):
            lo, hi = (1.0, surf.h_star) if surf.params.R < 1 else (surf.h_star, 1.0)
            v = np.linspace(lo, hi, 200)[1:-1]
            assert np.min(slope_bound_gap(surf, v)) > 0.0
            assert abs(slope_bound_gap(surf, surf.h_star)) < 1e-8


class TestThresholdSurface:
    def test_upper_branch_closed_form(self, thresh_R05):
        p = thresh_R05.params
        R = p.R
        z = np.array([thresh_R05.z_star, 2 * thresh_R05.z_star, 10.0])
        want = p.g_at_zero * thresh_R05.m_qstar ** (-R) * (1 + z) ** (1 - R)
        assert np.allclose(np.asarray(eval_g(thresh_R05, z)), want, rtol=1e-15)
        # derivative of the upper branch (direct differentiation)
        want1 = (1 - R) * p.g_at_zero * thresh_R05.m_qstar ** (-R) * (1 + z) ** (-R)
        assert np.allclose(np.asarray(eval_g1(thresh_R05, z)), want1, rtol=1e-15)

    def test_level_at_zero(self, thresh_R05, thresh_R2):
        # below u_lo - where h sits within ~1e-12 of 1 - g clamps to (R/beta)^R;
        # the approach rate is (1-R)/kappa per log-unit, so the depth is
        # surface-specific (u_lo is chosen adaptively by the builder)
        assert eval_g(thresh_R05, 1e-30) == pytest.approx(SQRT5, rel=1e-9)
        z_deep = math.exp(thresh_R2._u_lo - 5.0)
        assert eval_g(thresh_R2, z_deep) == pytest.approx(400.0, rel=1e-9)

    @pytest.mark.parametrize("fixture", ["thresh_R05", "thresh_R2"])
    def test_smooth_fit(self, fixture, request):
        surf = request.getfixturevalue(fixture)
        zs = surf.z_star
        d = 1e-4 * zs
        for f in (lambda z: eval_g(surf, z), lambda z: eval_g1(surf, z),
                  lambda z: eval_g2(surf, z)):
            below = one_sided_limit(f, zs, d, -1)
            above = one_sided_limit(f, zs, d, +1)
            assert abs(above - below) <= 1e-6 * abs(f(zs))
        assert max(surf.smooth_fit.values()) < 1e-10

    @pytest.mark.parametrize("fixture", ["thresh_R05", "thresh_R2"])
    def test_hjb_residual_interior(self, fixture, request):
        surf = request.getfixturevalue(fixture)
        z = np.geomspace(surf.z_star * 1e-5, surf.z_star * 0.99999, 500)
        assert np.max(np.abs(hjb_residual(surf, z))) < 1e-6

    def test_shape_R_below_one(self, thresh_R05):
        z = np.geomspace(thresh_R05.z_star * 1e-4, thresh_R05.z_star * 20, 500)
        g = np.asarray(eval_g(thresh_R05, z))
        assert np.all(np.diff(g) > 0)
        assert np.all(np.asarray(eval_g2(thresh_R05, z)) < 0)

    def test_shape_R_above_one(self, thresh_R2):
        z = np.geomspace(thresh_R2.z_star * 1e-4, thresh_R2.z_star * 20, 500)
        g = np.asarray(eval_g(thresh_R2, z))
        assert np.all(np.diff(g) < 0)
        assert np.all(g > 0)
        assert np.all(np.asarray(eval_g2(thresh_R2, z)) > 0)

    @pytest.mark.parametrize("fixture", ["thresh_R05", "thresh_R2"])
    def test_concavity_identity(self, fixture, request):
        surf = request.getfixturevalue(fixture)
        R = surf.params.R
        z = np.geomspace(surf.z_star * 1e-4, surf.z_star * 50, 500)
        expr = (R * np.asarray(eval_g1(surf, z)) ** 2
                + (1 - R) * np.asarray(eval_g(surf, z)) * np.asarray(eval_g2(surf, z)))
        assert np.max(expr) <= 1e-10
        beyond = z >= surf.z_star
        assert np.max(np.abs(expr[beyond])) <= 1e-10

    @pytest.mark.parametrize("fixture", ["thresh_R05", "thresh_R2"])
    def test_gradients_vs_central_differences(self, fixture, request):
        surf = request.getfixturevalue(fixture)
        zs = surf.z_star
        rng = np.random.default_rng(11)
        z = np.exp(rng.uniform(math.log(zs * 1e-2), math.log(zs * 5), 100))
        for zi in z:
            h1 = 1e-6 * zi
            h2 = 1e-3 * zi
            if abs(zi - zs) < 4 * h2:
                continue
            fd1 = (eval_g(surf, zi + h1) - eval_g(surf, zi - h1)) / (2 * h1)
            fd2 = (eval_g(surf, zi + h2) - 2 * eval_g(surf, zi) + eval_g(surf, zi - h2)) / h2**2
            assert eval_g1(surf, zi) == pytest.approx(fd1, rel=1e-5)
            assert eval_g2(surf, zi) == pytest.approx(fd2, rel=1e-5)

    def test_h_range(self, thresh_R05, thresh_R2):
        u = np.linspace(thresh_R05._u_lo, thresh_R05.u_star, 400)
        h = np.asarray(thresh_R05.h_of_u(u))
        assert np.all(h >= 1.0 - 1e-9) and np.all(h <= thresh_R05.h_star + 1e-9)
        u = np.linspace(thresh_R2._u_lo, thresh_R2.u_star, 400)
        h = np.asarray(thresh_R2.h_of_u(u))
        assert np.all(h >= thresh_R2.h_star - 1e-9) and np.all(h <= 1.0 + 1e-9)

    def test_rejects_nonpositive_ratio(self, thresh_R05):
        with pytest.raises(ValueError):
            eval_g(thresh_R05, 0.0)
        with pytest.raises(ValueError):
            eval_g1(thresh_R05, -1.0)

    def test_extrapolation_flag(self, thresh_R05):
        z_deep = thresh_R05.z_star * math.exp(-41.0)
        assert thresh_R05.extrapolated(z_deep)
        assert not thresh_R05.extrapolated(thresh_R05.z_star * 0.5)

    def test_sign_of_g(self, thresh_R05, thresh_R2):
        z = np.geomspace(1e-3, 50, 100)
        assert np.all((1 - 0.5) * np.asarray(eval_g(thresh_R05, z)) > 0)
        assert np.all((1 - 2.0) * np.asarray(eval_g(thresh_R2, z)) < 0)


class TestValueFunction:
    def test_sell_immediately_closed_form(self, sell_now):
        v = value_function(sell_now, AgentState(1.0, 1.0, 1.0))
        assert v == pytest.approx(SQRT5 * math.sqrt(2.0) / 0.5, rel=1e-14)

    def test_zero_holding(self, thresh_R05, cash_R05, sell_now):
        for surf in (thresh_R05, cash_R05, sell_now):
            v = value_function(surf, AgentState(1.0, 1.0, 0.0))
            assert v == pytest.approx(SQRT5 / 0.5, rel=1e-14)

    def test_time_stationarity(self, thresh_R05):
        st0 = AgentState(1.0, 1.0, 1.0, 0.0)
        st5 = AgentState(1.0, 1.0, 1.0, 5.0)
        assert value_function(thresh_R05, st5) == pytest.approx(
            math.exp(-0.1 * 5.0) * value_function(thresh_R05, st0), rel=1e-14)

    def test_zero_cash_boundary(self, thresh_R05):
        R = 0.5
        v = value_function(thresh_R05, AgentState(0.0, 1.0, 2.0))
        want = 2.0 ** (1 - R) / (1 - R) * SQRT5 * thresh_R05.m_qstar ** (-R)
        assert v == pytest.approx(want, rel=1e-14)

    def test_homotheticity(self, thresh_R05):
        base = value_function(thresh_R05, AgentState(1.0, 1.0, 1.0))
        for lam in (0.5, 2.0, 10.0):
            v = value_function(thresh_R05, AgentState(lam, 1.0, lam))
            assert v == pytest.approx(lam**0.5 * base, rel=1e-12)

    def test_ill_posed_refused(self):
        with pytest.raises(IllPosedError):
            build_surface(ModelParams.from_normalized(3.5, 2, 0.1, 0.5))

    def test_threshold_builder_guards_regime(self):
        with pytest.raises(Exception):
            build_threshold_surface(ModelParams.from_normalized(2, 2, 0.1, 0.5))

    def test_degenerate_surface_shape(self, sell_now):
        assert sell_now.z_star == 0.0
        assert sell_now.regime is Regime.SELL_IMMEDIATELY
        z = np.geomspace(1e-3, 10, 50)
        want = SQRT5 * (1 + z) ** 0.5
        assert np.allclose(np.asarray(eval_g(sell_now, z)), want, rtol=1e-15)
