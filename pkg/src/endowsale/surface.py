"""Value-surface construction for all well-posed regimes.

Everything is expressed through a scalar function g of the ratio z = y*theta/x,
with V(x,y,theta,t) = e^{-beta t} x^{1-R} g(z)/(1-R).  The builders produce:

* SellImmediately: closed form g(z) = (R/beta)^R (1+z)^{1-R} (critical ratio 0).
* ThresholdSale: below the finite critical ratio z*, g = (R/beta)^R h(ln z)
  where h solves dh/du = (1-R) h W(h) backwards from h(ln z*) = h*; at and
  above z*, the closed form (R/beta)^R m(q*)^{-R} (1+z)^{1-R}.  W is the
  inverse of the transformed crossing curve N.
* CashFirst: g = (R/beta)^R h(ln z) everywhere, with h inverse to the
  integral transform gamma(v); the improper integral is evaluated on the
  crossing grid plus an analytic power-law tail.

First and second derivatives of g come from the exact identities
z g'(z) = (R/beta)^R w(h) and z^2 g''(z) = (R/beta)^R (w'(h)-1) w(h) with
w(v) = v(1-R)W(v); the w-ODE supplies w' so no double differencing occurs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import BPoly, CubicHermiteSpline

from .ncurve import NCurve, Termination, find_qstar, integrate_n
from .params import AgentState, ModelParams, ParameterError, Regime, classify

__all__ = [
    "SurfaceError",
    "TailError",
    "IllPosedError",
    "GSurface",
    "build_surface",
    "build_threshold_surface",
    "build_cashfirst_surface",
    "eval_W",
    "eval_w",
    "eval_g",
    "eval_g1",
    "eval_g2",
    "value_function",
    "wode_residual",
    "hjb_residual",
    "slope_bound_gap",
]

U_SPAN = 40.0        # h is tracked over [u* - U_SPAN, u*]; below, its distance
                     # to 1 is < ~1e-12 and the z->0 asymptote takes over
V_CAP = 1e12         # safety cap for the cash-first improper-integral split
TAIL_MISMATCH_TOL = 1e-4


class SurfaceError(RuntimeError):
    """Value-surface construction failed a consistency requirement."""


class TailError(SurfaceError):
    """Cash-first integrand did not reach its power-law asymptote."""


class IllPosedError(RuntimeError):
    """The value function is +infinity; no surface or policy exists."""


def _as1d(x):
    arr = np.asarray(x, dtype=float)
    return np.atleast_1d(arr), arr.ndim == 0


def _ret(out: np.ndarray, scalar: bool):
    return float(out[0]) if scalar else out


def _verify_monotone(derivative, x: np.ndarray, sign: float, name: str) -> None:
    """Interpolants here must preserve the monotonicity the construction
    relies on; exact node slopes make Hermite cubics monotone in practice,
    and this check turns any violation into a hard error."""
    probe = np.unique(np.concatenate([x, 0.5 * (x[1:] + x[:-1])]))
    d = sign * derivative(probe)
    if np.any(d < -1e-12 * np.max(np.abs(d))):
        raise SurfaceError(f"{name} interpolant lost monotonicity")


# ---------------------------------------------------------------------------
# inverse of N and companions
# ---------------------------------------------------------------------------


class _WMap:
    """W = N^{-1} with three branches: a linear stretch near v = 1 (from the
    analytic slope N'(0+) = kappa), a cubic Hermite spline over the grid with
    the exact node slopes W'(v) = (ell-n)/(v (delta^2/2)(1-R)^2 q), and --
    for cash-first surfaces -- the power-law completion toward W = 1.
    Monotonicity of the spline is verified at build time."""

    def __init__(self, ncurve: NCurve, far_tail: bool = False):
        p = ncurve.params
        self.params = p
        self.R = p.R
        self.kappa = ncurve.kappa
        self.m_one = float(p.m(1.0))
        self.far_tail = far_tail

        v, q = ncurve.N, ncurve.q
        slope = ncurve.den / (v * 0.5 * p.delta_sq * (1.0 - p.R) ** 2 * q)
        if self.R > 1:  # N decreasing: flip so the interpolant sees increasing x
            v, q, slope = v[::-1], q[::-1], slope[::-1]
        keep = np.concatenate(([True], np.diff(v) > 0))
        v, q, slope = v[keep], q[keep], slope[keep]
        self._pchip = CubicHermiteSpline(v, q, slope, extrapolate=False)
        self._dpchip = self._pchip.derivative()
        _verify_monotone(self._dpchip, v, 1.0 if self.R < 1 else -1.0, "W")
        self.v_grid_lo = float(v[0])
        self.v_grid_hi = float(v[-1])
        # mathematical domain of W (closed at the h* end)
        if ncurve.termination is Termination.CROSSED_M:
            if self.R < 1:
                self.v_min, self.v_max = 1.0, ncurve.h_star
            else:
                self.v_min, self.v_max = ncurve.h_star, 1.0
        else:  # cash-first: one side runs off to the asymptote
            if self.R < 1:
                self.v_min, self.v_max = 1.0, math.inf
            else:
                self.v_min, self.v_max = 0.0, 1.0

    def _masks(self, v: np.ndarray):
        """near: between 1 and the grid edge (linear branch); core: on-grid;
        far: beyond the other edge (power tail or roundoff clip)."""
        if self.R < 1:
            near = v < self.v_grid_lo
            far = v > self.v_grid_hi
        else:
            near = v > self.v_grid_hi
            far = v < self.v_grid_lo
        return near, ~(near | far), far

    def W(self, v):
        v, scalar = _as1d(v)
        out = np.empty_like(v)
        near, core, far = self._masks(v)
        out[near] = (v[near] - 1.0) / self.kappa
        out[core] = self._pchip(v[core])
        if np.any(far):
            vf = v[far]
            if self.far_tail:
                ex = -1.0 / (1.0 - self.R)
                out[far] = 1.0 - self.m_one ** (self.R * ex) * vf**ex
            else:
                # roundoff excursions just outside the closed domain
                out[far] = self._pchip(np.clip(vf, self.v_grid_lo, self.v_grid_hi))
        return _ret(np.clip(out, 0.0, 1.0), scalar)

    def dW(self, v):
        v, scalar = _as1d(v)
        out = np.empty_like(v)
        near, core, far = self._masks(v)
        out[near] = 1.0 / self.kappa
        out[core] = self._dpchip(v[core])
        if np.any(far):
            vf = v[far]
            if self.far_tail:
                ex = -1.0 / (1.0 - self.R)
                out[far] = -ex * self.m_one ** (self.R * ex) * vf ** (ex - 1.0)
            else:
                out[far] = self._dpchip(np.clip(vf, self.v_grid_lo, self.v_grid_hi))
        return _ret(out, scalar)

    def w(self, v):
        v, scalar = _as1d(v)
        out = v * (1.0 - self.R) * np.asarray(self.W(v))
        return _ret(out, scalar)

    def wprime(self, v):
        """w'(v) = (1-R)(W + v W'), with W' carrying the exact node slopes
        from the crossing ODE.

        Equivalent to solving the first-order ODE for w' pointwise, but
        without the 1/w amplification that the solved form suffers from as
        w -> 0 near v = 1.
        """
        v, scalar = _as1d(v)
        out = (1.0 - self.R) * (np.asarray(self.W(v)) + v * np.asarray(self.dW(v)))
        return _ret(out, scalar)


# ---------------------------------------------------------------------------
# the surface object
# ---------------------------------------------------------------------------


@dataclass
class GSurface:
    """Case-tagged value surface with g, g', g'' evaluators.

    ``z_star`` is 0 (sell immediately), finite (threshold sale) or +inf
    (cash first).  ``h_grid``/``gamma_grid`` carry the construction samples
    for serialization; evaluation uses dense interpolants internally.
    """

    params: ModelParams
    regime: Regime
    ncurve: NCurve
    z_star: float
    u_star: float
    h_star: float
    m_qstar: float
    m_one: float
    g_at_zero: float
    h_grid: tuple = field(default=(), repr=False)      # (u samples, h samples)
    gamma_grid: tuple = field(default=(), repr=False)  # (v samples, gamma samples)
    smooth_fit: dict = field(default_factory=dict, repr=False)
    _wmap: object = field(default=None, repr=False)
    _hdense: object = field(default=None, repr=False)  # callable u -> h
    _u_lo: float = field(default=-math.inf, repr=False)
    _u_hi: float = field(default=math.inf, repr=False)
    _h_lo: float = field(default=1.0, repr=False)

    # decay rate of h - 1 per unit of u = ln z, toward z = 0
    @property
    def _rho(self) -> float:
        return (1.0 - self.params.R) / self.ncurve.kappa

    # -- h(ln z) with asymptotic continuations ------------------------------

    def h_of_u(self, u):
        u, scalar = _as1d(u)
        out = np.empty_like(u)
        lo = u < self._u_lo
        hi = u > self._u_hi
        mid = ~(lo | hi)
        if np.any(mid):
            out[mid] = self._hdense(u[mid])
        if np.any(lo):
            out[lo] = 1.0 + (self._h_lo - 1.0) * np.exp(self._rho * (u[lo] - self._u_lo))
        if np.any(hi):
            if self.regime is Regime.CASH_FIRST:
                R = self.params.R
                out[hi] = self.m_one ** (-R) * np.exp((1.0 - R) * u[hi])
            else:  # threshold: u beyond u* belongs to the closed-form branch
                out[hi] = self.h_star
        return _ret(out, scalar)

    def extrapolated(self, z):
        """True where evaluation falls outside the constructed grids and an
        asymptotic continuation was used."""
        z, scalar = _as1d(z)
        if self.regime is Regime.SELL_IMMEDIATELY:
            out = np.zeros(z.shape, dtype=bool)
            return bool(out[0]) if scalar else out
        with np.errstate(divide="ignore"):
            u = np.log(z)
        out = u < self._u_lo
        if self.regime is Regime.CASH_FIRST:
            out = out | (u > self._u_hi)
        return bool(out[0]) if scalar else out

    # -- g, g', g'' ----------------------------------------------------------

    def g(self, z):
        z, scalar = _as1d(self._check_z(z))
        R, g0 = self.params.R, self.g_at_zero
        up = z >= self.z_star
        out = np.empty_like(z)
        if np.any(up):
            out[up] = g0 * self.m_qstar ** (-R) * (1.0 + z[up]) ** (1.0 - R)
        if np.any(~up):
            out[~up] = g0 * np.asarray(self.h_of_u(np.log(z[~up])))
        return _ret(out, scalar)

    def g1(self, z):
        z, scalar = _as1d(self._check_z(z))
        R, g0 = self.params.R, self.g_at_zero
        up = z >= self.z_star
        out = np.empty_like(z)
        if np.any(up):
            out[up] = (1.0 - R) * g0 * self.m_qstar ** (-R) * (1.0 + z[up]) ** (-R)
        if np.any(~up):
            zl = z[~up]
            out[~up] = g0 * self._w_at(np.log(zl)) / zl
        return _ret(out, scalar)

    def g2(self, z):
        z, scalar = _as1d(self._check_z(z))
        R, g0 = self.params.R, self.g_at_zero
        up = z >= self.z_star
        out = np.empty_like(z)
        if np.any(up):
            out[up] = -R * (1.0 - R) * g0 * self.m_qstar ** (-R) * (1.0 + z[up]) ** (-R - 1.0)
        if np.any(~up):
            zl = z[~up]
            u = np.log(zl)
            w = self._w_at(u)
            wp = self._wp_at(u)
            out[~up] = g0 * (wp - 1.0) * w / (zl * zl)
        return _ret(out, scalar)

    def _w_at(self, u: np.ndarray) -> np.ndarray:
        """w(h(u)) with the same exponential continuation as h below u_lo."""
        h = np.asarray(self.h_of_u(u))
        out = np.asarray(self._wmap.w(h)).copy()
        lo = u < self._u_lo
        if np.any(lo):
            # w = (1-R) h W(h) with the linear near-1 branch W = (h-1)/kappa
            out[lo] = (1.0 - self.params.R) * h[lo] * (h[lo] - 1.0) / self.ncurve.kappa
        return out

    def _wp_at(self, u: np.ndarray) -> np.ndarray:
        h = np.asarray(self.h_of_u(u))
        out = np.asarray(self._wmap.wprime(h)).copy()
        lo = u < self._u_lo
        if np.any(lo):
            out[lo] = (1.0 - self.params.R) * (2.0 * h[lo] - 1.0) / self.ncurve.kappa
        return out

    @staticmethod
    def _check_z(z):
        z = np.asarray(z, dtype=float)
        if np.any(z <= 0.0):
            raise ValueError("ratio z must be positive")
        return z

    def consumption_scale(self, z):
        """(g - z g'/(1-R))^{-1/R}: consumption per unit of cash at ratio z."""
        z, scalar = _as1d(self._check_z(z))
        R = self.params.R
        core = np.asarray(self.g(z)) - z * np.asarray(self.g1(z)) / (1.0 - R)
        out = core ** (-1.0 / R)
        return _ret(out, scalar)

    def as_dict(self) -> dict:
        d = {
            "regime": self.regime.value,
            "q_star": self.ncurve.q_star,
            "z_star": self.z_star,
            "h_star": self.h_star,
            "m_qstar": self.m_qstar,
            "m_one": self.m_one,
            "g_at_zero": self.g_at_zero,
            "kappa": self.ncurve.kappa,
            "grids": {
                "q": self.ncurve.q.tolist(),
                "n": self.ncurve.n.tolist(),
                "N": self.ncurve.N.tolist(),
            },
        }
        if self.h_grid:
            d["grids"]["u"] = np.asarray(self.h_grid[0]).tolist()
            d["grids"]["h"] = np.asarray(self.h_grid[1]).tolist()
        if self.gamma_grid:
            d["grids"]["v"] = np.asarray(self.gamma_grid[0]).tolist()
            d["grids"]["gamma"] = np.asarray(self.gamma_grid[1]).tolist()
        return d


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def build_surface(params: ModelParams, ncurve: NCurve | None = None) -> GSurface:
    """Dispatch on the regime; raises IllPosedError where no surface exists."""
    regime = classify(params)
    if regime is Regime.ILL_POSED:
        raise IllPosedError(
            "the value function is +infinity for these parameters; "
            "see the closed-form diverging-utility diagnostic in the policy module"
        )
    if regime is Regime.SELL_IMMEDIATELY:
        return _build_degenerate_surface(params)
    if regime is Regime.THRESHOLD_SALE:
        return build_threshold_surface(params, ncurve)
    return build_cashfirst_surface(params, ncurve)


def _build_degenerate_surface(params: ModelParams) -> GSurface:
    """Sell-immediately closed form: the upper branch with q* = z* = 0."""
    return GSurface(
        params=params,
        regime=Regime.SELL_IMMEDIATELY,
        ncurve=integrate_n(params),
        z_star=0.0,
        u_star=-math.inf,
        h_star=1.0,
        m_qstar=1.0,
        m_one=float(params.m(1.0)),
        g_at_zero=params.g_at_zero,
    )


def _admissibility_check(R: float, h_star: float, hs: np.ndarray) -> None:
    tol = 1e-8
    if R < 1:
        ok = np.all(hs >= 1.0 - tol) and np.all(hs <= h_star + tol)
    else:
        ok = np.all(hs >= h_star - tol) and np.all(hs <= 1.0 + tol)
    if not ok:
        raise SurfaceError("h left its admissible interval during integration")


def build_threshold_surface(
    params: ModelParams,
    ncurve: NCurve | None = None,
    u_span: float | None = None,
    rtol: float = 1e-11,
) -> GSurface:
    """Threshold-sale surface: crossing curve, then h backwards from h*.

    The integration span below u* = ln z* adapts to the exponential rate
    (1-R)/kappa at which h approaches 1, so that h - 1 < ~1e-12 at the low
    end regardless of parameters; U_SPAN is the floor.
    """
    if classify(params) is not Regime.THRESHOLD_SALE:
        raise ParameterError("threshold surface requires the ThresholdSale regime")
    if ncurve is None:
        # surface-grade curve: interpolant curvature amplifies node noise
        # by 1/spacing^2, so the crossing solve runs tighter than default
        ncurve = integrate_n(params, rtol=1e-12)
    q_star, z_star = find_qstar(params, ncurve)
    u_star = math.log(z_star)
    h_star = ncurve.h_star
    R = params.R
    wmap = _WMap(ncurve, far_tail=False)
    if u_span is None:
        rate = abs((1.0 - R) / ncurve.kappa)
        u_span = min(max(U_SPAN, math.log(max(abs(h_star - 1.0), 1e-3) / 1e-12) / rate), 4000.0)

    if R < 1:
        h_min, h_max = 1.0, h_star
    else:
        h_min, h_max = h_star, 1.0

    def rhs(u, y):
        h = min(max(y[0], h_min), h_max)
        return ((1.0 - R) * h * wmap.W(h),)

    u_lo = u_star - u_span
    sol = solve_ivp(
        rhs,
        (u_star, u_lo),
        (h_star,),
        method="RK45",
        rtol=rtol,
        atol=1e-15,
        max_step=0.25,
        dense_output=True,
    )
    if sol.status != 0:
        raise SurfaceError(f"h integration failed: {sol.message}")

    us = np.linspace(u_lo, u_star, 801)
    hs = sol.sol(us)[0]
    _admissibility_check(R, h_star, hs)

    dense = sol.sol
    surf = GSurface(
        params=params,
        regime=Regime.THRESHOLD_SALE,
        ncurve=ncurve,
        z_star=z_star,
        u_star=u_star,
        h_star=h_star,
        m_qstar=float(params.m(q_star)),
        m_one=float(params.m(1.0)),
        g_at_zero=params.g_at_zero,
        h_grid=(us, hs),
        _wmap=wmap,
        _hdense=lambda u: dense(np.asarray(u, dtype=float))[0],
        _u_lo=u_lo,
        _u_hi=u_star,
        _h_lo=float(sol.sol(u_lo)[0]),
    )
    surf.smooth_fit = _smooth_fit_record(surf)
    return surf


def _smooth_fit_record(surf: GSurface) -> dict:
    """One-sided branch limits of g, g', g'' at z*, as relative gaps."""
    z, g0, R = surf.z_star, surf.g_at_zero, surf.params.R
    h, q = surf.h_star, surf.ncurve.q_star
    w_star = h * (1.0 - R) * q
    wp_star = 1.0 - R * q
    below = (
        g0 * h,
        g0 * w_star / z,
        g0 * (wp_star - 1.0) * w_star / z**2,
    )
    mq = surf.m_qstar ** (-R)
    above = (
        g0 * mq * (1.0 + z) ** (1.0 - R),
        (1.0 - R) * g0 * mq * (1.0 + z) ** (-R),
        -R * (1.0 - R) * g0 * mq * (1.0 + z) ** (-R - 1.0),
    )
    return {
        k: abs(b - a) / max(abs(a), abs(b), 1e-300)
        for k, a, b in zip(("g", "g1", "g2"), below, above)
    }


def build_cashfirst_surface(
    params: ModelParams,
    ncurve: NCurve | None = None,
    tail_mismatch_tol: float = TAIL_MISMATCH_TOL,
    v_cap: float = V_CAP,
) -> GSurface:
    """Cash-first surface: gamma on the crossing grid plus analytic tail,
    then h by monotone inversion."""
    if classify(params) is not Regime.CASH_FIRST:
        raise ParameterError("cash-first surface requires the CashFirst regime")
    if ncurve is None:
        ncurve = integrate_n(params, rtol=1e-12)
    if ncurve.termination is not Termination.REACHED_ONE:
        raise SurfaceError(
            f"cash-first construction expects the curves to meet at q = 1, got {ncurve.termination}"
        )
    R = params.R
    m1 = float(params.m(1.0))
    if m1 <= 0:
        raise SurfaceError("m(1) must be positive in the cash-first regime")

    q, v = ncurve.q, ncurve.N
    d2 = params.delta_sq

    v_end = float(v[-1])
    q_end = float(q[-1])
    if R < 1 and v_end > v_cap:
        raise TailError(f"grid endpoint {v_end:.3g} exceeds the cap {v_cap:.3g}")
    # asymptote check at the split point: integrand vs power law
    ex = -1.0 / (1.0 - R)
    integrand_end = (1.0 - q_end) / (v_end * q_end)
    asym_end = m1 ** (R * ex) * v_end ** (ex - 1.0)
    mismatch = abs(integrand_end / asym_end - 1.0)
    if mismatch > tail_mismatch_tol:
        raise TailError(
            f"integrand is {mismatch:.2e} away from its asymptote at the split point"
        )
    tail = abs(1.0 - R) * m1 ** (R * ex) * v_end**ex

    # improper integral of (1-W(s))/(sW(s)): the substitution s = N(q) turns
    # it into a proper integral of f(q), which tends to |1-R| as q -> 1;
    # per-interval Gauss-Legendre on the dense solution keeps the increments
    # consistent with the node slopes to ~1e-12 (composite rules on the
    # irregular grid leave jitter that the Hermite fit would amplify)
    coef = 0.5 * d2 * (1.0 - R) ** 2
    gl_x, gl_w = np.polynomial.legendre.leggauss(4)
    a, b = q[:-1], q[1:]
    half = 0.5 * (b - a)
    nodes = 0.5 * (a + b)[None, :] + half[None, :] * gl_x[:, None]
    fvals = coef * (1.0 - nodes) / np.abs(ncurve.den_at(nodes.ravel()).reshape(nodes.shape))
    increments = half * (gl_w[:, None] * fvals).sum(axis=0)
    big_i = np.concatenate([[0.0], np.cumsum(increments[::-1])])[::-1] + tail

    if R < 1:
        gamma = (np.log(v) + R * math.log(m1) - big_i) / (1.0 - R)
    else:
        gamma = (np.log(v) + R * math.log(m1) + big_i) / (1.0 - R)

    # gamma increases along the grid for both risk-aversion branches;
    # h = gamma^{-1} gets its exact node derivatives dh/du = w(h) = (1-R) v q
    # and d^2h/du^2 = w'(h) w(h), making the quintic Hermite pieces accurate
    # enough for the second-derivative identities downstream
    wmap = _WMap(ncurve, far_tail=True)
    keep = np.concatenate(([True], np.diff(gamma) > 0))
    u_knots, h_knots = gamma[keep], v[keep]
    h1 = (1.0 - R) * h_knots * q[keep]
    h2 = np.asarray(wmap.wprime(h_knots)) * h1
    hpchip = BPoly.from_derivatives(
        u_knots, np.column_stack([h_knots, h1, h2]), extrapolate=False
    )
    _verify_monotone(hpchip.derivative(), u_knots, 1.0 if R < 1 else -1.0, "h")
    return GSurface(
        params=params,
        regime=Regime.CASH_FIRST,
        ncurve=ncurve,
        z_star=math.inf,
        u_star=math.inf,
        h_star=ncurve.h_star,
        m_qstar=m1,  # boundary level at x = 0 is driven by m(1) here
        m_one=m1,
        g_at_zero=params.g_at_zero,
        h_grid=(u_knots, h_knots),
        gamma_grid=(v, gamma),
        _wmap=wmap,
        _hdense=lambda u: hpchip(np.asarray(u, dtype=float)),
        _u_lo=float(u_knots[0]),
        _u_hi=float(u_knots[-1]),
        _h_lo=float(h_knots[0]),
    )


# ---------------------------------------------------------------------------
# module-level operations
# ---------------------------------------------------------------------------


def eval_W(surface: GSurface, v):
    """Inverse of the transformed crossing curve at v; W(1) = 0."""
    wmap = surface._wmap
    if wmap is None:
        raise SurfaceError("this surface has no transformed-curve inverse (degenerate regime)")
    varr = np.asarray(v, dtype=float)
    if np.any(varr < wmap.v_min - 1e-12) or np.any(varr > wmap.v_max + 1e-12):
        raise ValueError(
            f"v outside the admissible range [{wmap.v_min:.6g}, {wmap.v_max:.6g}]"
        )
    return wmap.W(v)


def eval_w(surface: GSurface, v):
    """w(v) = v (1-R) W(v)."""
    varr, scalar = _as1d(v)
    out = varr * (1.0 - surface.params.R) * np.asarray(eval_W(surface, varr))
    return _ret(out, scalar)


def eval_g(surface: GSurface, z):
    return surface.g(z)


def eval_g1(surface: GSurface, z):
    return surface.g1(z)


def eval_g2(surface: GSurface, z):
    return surface.g2(z)


def value_function(surface: GSurface, state: AgentState) -> float:
    """Discounted value at the given state.

    Boundary conventions: a zero holding collapses to the cash-only value;
    zero cash with a positive holding uses the m-level boundary of the
    surface's regime (an immediate sale is triggered there in the threshold
    regime, but the value is still well defined).
    """
    p = surface.params
    R = p.R
    disc = math.exp(-p.beta * state.t)
    g0 = p.g_at_zero
    if state.theta == 0.0:
        if state.x == 0.0:
            return 0.0 if R < 1 else -math.inf
        return disc * state.x ** (1.0 - R) / (1.0 - R) * g0
    if state.x == 0.0:
        lvl = g0 * surface.m_qstar ** (-R)
        return disc * (state.y * state.theta) ** (1.0 - R) / (1.0 - R) * lvl
    return disc * state.x ** (1.0 - R) / (1.0 - R) * surface.g(state.z)


# ---------------------------------------------------------------------------
# numerical diagnostics (verification only; never used to build the surface)
# ---------------------------------------------------------------------------


def wode_residual(surface: GSurface, v, rel_step: float = 1e-6):
    """Residual of the first-order ODE for w, with w' from centered
    differences of the constructed map (independent of the analytic w')."""
    wmap = surface._wmap
    p = surface.params
    v, scalar = _as1d(v)
    dv = rel_step * (1.0 + np.abs(v))
    wp = (np.asarray(wmap.w(v + dv)) - np.asarray(wmap.w(v - dv))) / (2.0 * dv)
    w = np.asarray(wmap.w(v))
    Wv = np.asarray(wmap.W(v))
    out = (
        0.5 * p.delta_sq * w * wp
        - v
        + (p.epsilon - 0.5 * p.delta_sq) * w
        + (v * (1.0 - Wv)) ** (1.0 - 1.0 / p.R)
    )
    return _ret(out, scalar)


def hjb_residual(surface: GSurface, z):
    """Interior residual of the transformed optimality operator at ratio z,
    with w' taken from the interpolant derivative."""
    p = surface.params
    z, scalar = _as1d(z)
    u = np.log(z)
    h = np.asarray(surface.h_of_u(u))
    wmap = surface._wmap
    w = np.asarray(wmap.w(h))
    wp = np.asarray(wmap.wprime(h))
    Wh = np.asarray(wmap.W(h))
    out = (
        (h * (1.0 - Wh)) ** (1.0 - 1.0 / p.R)
        - h
        + (p.epsilon - 0.5 * p.delta_sq) * w
        + 0.5 * p.delta_sq * wp * w
    )
    return _ret(out, scalar)


def slope_bound_gap(surface: GSurface, v):
    """1 - R w/((1-R)v) - w'(v): nonnegative on the interior, zero at h*."""
    wmap = surface._wmap
    v, scalar = _as1d(v)
    w = np.asarray(wmap.w(v))
    wp = np.asarray(wmap.wprime(v))
    out = 1.0 - surface.params.R * w / ((1.0 - surface.params.R) * v) - wp
    return _ret(out, scalar)
