"""First-crossing machinery for the ratio ODE.

The critical sale ratio is pinned down by the first q in (0, 1] where the
solution n(q) of

    n'(q) = (1-R) n (m(q) - n) / (R (1-q) (ell(q) - n)),   n(0) = 1,

meets the quadratic m(q).  (This is the combined form of the ratio ODE;
the factored form n'/n = (1-R)/(R(1-q)) - (delta^2/2)((1-R)^2/R) q/(ell-n)
is identical but subtracts two diverging terms near q = 1.)  The initial
slope n'(0) resolves the 0/0 start and is a root of a quadratic.

The transformed curve N(q) = n(q)^{-R}(1-q)^{R-1} is the raw material for
the value surface: its inverse W and the endpoint h* = N(q*) feed every
evaluator downstream.

No closed form for n is available; we integrate adaptively and locate the
crossing by sign change plus bisection refinement on the dense output.
When the curves only meet at q = 1 (the cash-first regime) the contact is
tangential and n - m ~ C (1-q)^2; integration stops at a switch point and
the last stretch uses that expansion, whose coefficient

    C = R delta^2 (1-R)(epsilon - delta^2 R) / (2 m(1))

follows from matching slopes at q = 1.  This sidesteps the 0/0 noise that
otherwise stalls adaptive stepping against the tangency.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .params import ModelParams, ParameterError, Regime, classify

__all__ = [
    "StepFailure",
    "Termination",
    "NCurve",
    "phi_quadratic",
    "initial_slope",
    "integrate_n",
    "find_qstar",
]

# Start offset: the ODE right side is 0/0 at q = 0; the quadratic root below
# supplies the slope and we seed with the first-order series at q0.
DEFAULT_Q0 = 1e-6
# Grids toward q = 1 stop this far short of it.
DEFAULT_Q_END_GAP = 1e-8
# Hand over from the integrator to the tangency expansion at this gap
# (shrunk adaptively when m(1) is small, i.e. near the ill-posed boundary).
DEFAULT_SWITCH_GAP = 3e-4
DEFAULT_RTOL = 1e-10
DEFAULT_MAX_STEP = 0.01
# n at or below this counts as absorbed at zero.
N_FLOOR = 1e-9
# |ell - n| below this (pre-crossing) means the controller lost the bracket.
DEN_FLOOR = 1e-14


class StepFailure(RuntimeError):
    """Adaptive controller could not continue; carries the last good q."""

    def __init__(self, message: str, last_q: float):
        super().__init__(f"{message} (last good q = {last_q:.12g})")
        self.last_q = last_q


class Termination(enum.Enum):
    CROSSED_M = "CrossedM"
    REACHED_ONE = "ReachedOne"
    ABSORBED_AT_ZERO = "AbsorbedAtZero"


def phi_quadratic(params: ModelParams, chi):
    """Phi(chi) = chi^2 - (1-R)(delta^2/2 - eps + 1/R) chi - eps (1-R)^2 / R.

    The admissible initial slope n'(0) is a root of Phi.
    """
    R, eps, d2 = params.R, params.epsilon, params.delta_sq
    b = (1.0 - R) * (0.5 * d2 - eps + 1.0 / R)
    c = eps * (1.0 - R) ** 2 / R
    chi = np.asarray(chi, dtype=float)
    out = chi * chi - b * chi - c
    return out if out.ndim else float(out)


def initial_slope(params: ModelParams) -> float:
    """n'(0): the smaller root of Phi for R < 1, the larger for R > 1.

    Phi evaluated at ell'(0) is -delta^2 (1-R)^2 / (2R) < 0, so a real root
    exists on each side of ell'(0) and the chosen one satisfies the side
    condition n'(0)/(1-R) < delta^2/2 - epsilon.
    """
    R, eps, d2 = params.R, params.epsilon, params.delta_sq
    b = (1.0 - R) * (0.5 * d2 - eps + 1.0 / R)
    c = eps * (1.0 - R) ** 2 / R  # -c is the product of the two roots
    s = math.sqrt(max(b * b + 4.0 * c, 0.0))
    # evaluate the large-magnitude root directly, the other from the root
    # product, avoiding cancellation when |c| << b^2
    if b >= 0:
        hi = 0.5 * (b + s)
        lo = -c / hi if hi != 0.0 else 0.5 * (b - s)
    else:
        lo = 0.5 * (b - s)
        hi = -c / lo if lo != 0.0 else 0.5 * (b + s)
    return lo if params.R < 1 else hi


def tangency_coefficient(params: ModelParams) -> float:
    """C in n - m ~ C (1-q)^2 at the tangential meeting point q = 1."""
    R, eps, d2 = params.R, params.epsilon, params.delta_sq
    return R * d2 * (1.0 - R) * (eps - d2 * R) / (2.0 * params.m(1.0))


@dataclass
class NCurve:
    """Dense record of the crossing problem.

    Attributes
    ----------
    q, n, m, ell, N : ndarray
        Grid samples; N = n^{-R} (1-q)^{R-1}.
    q_star : float
        First-crossing ratio (1.0 when the curves only meet at q = 1,
        nan when n was absorbed at zero).
    h_star : float
        N(q_star); +inf / 0 in the cash-first regime for R < 1 / R > 1.
    kappa : float
        Analytic N'(0+) = (1 - R) - R n'(0).
    chi0 : float
        Initial slope n'(0).
    termination : Termination
    """

    params: ModelParams
    q: np.ndarray
    n: np.ndarray
    m: np.ndarray
    ell: np.ndarray
    N: np.ndarray
    q_star: float
    h_star: float
    kappa: float
    chi0: float
    termination: Termination
    q_switch: float = math.inf     # expansion takes over beyond this q
    tail_coeff: float = math.nan
    den: np.ndarray = None         # ell - n, subtraction-free on the tail
    _sol: object = field(default=None, repr=False)

    def n_at(self, q):
        """Evaluate n anywhere on the covered range [q0, q[-1]]."""
        q = np.asarray(q, dtype=float)
        scalar = q.ndim == 0
        q = np.atleast_1d(q)
        out = np.empty_like(q)
        tail = q > self.q_switch
        if np.any(~tail):
            if self._sol is None:
                out[~tail] = np.interp(q[~tail], self.q, self.n)
            else:
                out[~tail] = self._sol(q[~tail])[0]
        if np.any(tail):
            g = 1.0 - q[tail]
            out[tail] = self.params.m(q[tail]) + self.tail_coeff * g * g
        return float(out[0]) if scalar else out

    def den_at(self, q):
        """ell(q) - n(q), using the cancellation-free form on the tail."""
        q = np.asarray(q, dtype=float)
        scalar = q.ndim == 0
        q = np.atleast_1d(q)
        out = np.empty_like(q)
        tail = q > self.q_switch
        if np.any(~tail):
            out[~tail] = self.params.ell(q[~tail]) - self.n_at(q[~tail])
        if np.any(tail):
            g = 1.0 - q[tail]
            d2 = self.params.delta_sq
            R = self.params.R
            out[tail] = g * (0.5 * d2 * (1.0 - R) * q[tail] - self.tail_coeff * g)
        return float(out[0]) if scalar else out

    @property
    def crossed(self) -> bool:
        return self.termination is Termination.CROSSED_M


def _rhs(params: ModelParams):
    R = params.R
    coef = (1.0 - R) / R
    sgn = 1.0 if R < 1 else -1.0  # sign of the admissible ell - n

    def fun(q, y):
        n = y[0]
        den = params.ell(q) - n
        if sgn * den <= 0.0:
            # a trial stage probed past the admissible region: return a steep
            # slope of the restoring sign so the controller backs off
            den = sgn * DEN_FLOOR
        return (coef * n * (params.m(q) - n) / ((1.0 - q) * den),)

    return fun


def _trivial_curve(params: ModelParams, chi0: float) -> NCurve:
    one = np.array([1.0])
    return NCurve(
        params=params,
        q=np.array([0.0]),
        n=one.copy(),
        m=one.copy(),
        ell=one.copy(),
        N=one.copy(),
        q_star=0.0,
        h_star=1.0,
        kappa=(1.0 - params.R) - params.R * chi0,
        chi0=chi0,
        termination=Termination.CROSSED_M,
        den=np.array([0.0]),
        _sol=None,
    )


def integrate_n(
    params: ModelParams,
    q0: float = DEFAULT_Q0,
    max_step: float = DEFAULT_MAX_STEP,
    rtol: float = DEFAULT_RTOL,
    q_end_gap: float = DEFAULT_Q_END_GAP,
    switch_gap: float = DEFAULT_SWITCH_GAP,
) -> NCurve:
    """Integrate the crossing ODE from n(q0) = 1 + n'(0) q0 until the first
    crossing with m, absorption of n at zero, or arrival at q = 1.

    Crossing detection: terminal sign-change event on (1-R)(n - m), refined
    on the dense output to |n - m| < 1e-12 max(1, |m|).
    """
    if not (0 < q0 <= 1e-4):
        raise ValueError(f"q0 must lie in (0, 1e-4], got {q0}")
    if rtol <= 0:
        raise ValueError("rtol must be positive")
    R = params.R
    chi0 = initial_slope(params)

    if params.epsilon <= 0:
        # q* = 0: n separates from m at the origin and never crosses back
        return _trivial_curve(params, chi0)

    regime = classify(params)
    if regime is Regime.CASH_FIRST:
        # the curves meet tangentially at q = 1; stop where the expansion
        # n - m ~ C(1-q)^2 is accurate and the step controller still healthy
        m1 = params.m(1.0)
        scale = max(abs(params.R * (params.epsilon - params.cash_first_bound)), 1e-12)
        gap = min(switch_gap, 1e-2 * m1 / scale)
        if gap < 1e-6:
            raise StepFailure(
                "parameters sit too close to the ill-posed boundary for the "
                "tangency expansion",
                1.0 - switch_gap,
            )
        q_target = 1.0 - gap
    else:
        q_target = 1.0 - q_end_gap

    one_minus_R = 1.0 - R

    def crossing(q, y):
        return one_minus_R * (y[0] - params.m(q))

    crossing.terminal = True
    crossing.direction = -1.0

    def absorbed(q, y):
        return y[0] - N_FLOOR

    absorbed.terminal = True
    absorbed.direction = -1.0

    sol = solve_ivp(
        _rhs(params),
        (q0, q_target),
        (1.0 + chi0 * q0,),
        method="RK45",
        rtol=rtol,
        atol=1e-14,
        max_step=max_step,
        dense_output=True,
        events=(crossing, absorbed),
    )
    if sol.status == -1:
        last_q = float(sol.t[-1])
        last_n = float(sol.y[0, -1])
        if last_n < 1e-6:
            return _finalize(params, sol, last_q, chi0, Termination.ABSORBED_AT_ZERO, q0)
        raise StepFailure(f"adaptive step control failed: {sol.message}", last_q)

    if sol.status == 1 and len(sol.t_events[0]):
        q_star = _refine_crossing(params, sol.sol, float(sol.t_events[0][0]))
        return _finalize(params, sol, q_star, chi0, Termination.CROSSED_M, q0)
    if sol.status == 1 and len(sol.t_events[1]):
        q_abs = float(sol.t_events[1][0])
        return _finalize(params, sol, q_abs, chi0, Termination.ABSORBED_AT_ZERO, q0)

    # ran the full span without an event
    if regime is not Regime.CASH_FIRST:
        raise StepFailure(
            "no crossing found before q = 1; parameters sit too close to a "
            "regime boundary",
            q_target,
        )
    return _finalize(
        params, sol, q_target, chi0, Termination.REACHED_ONE, q0, q_end_gap=q_end_gap
    )


def _refine_crossing(params: ModelParams, dense, q_star: float) -> float:
    """Tighten the event location to |n - m| < 1e-12 max(1, |m|)."""

    def gap(q):
        return float(dense(q)[0] - params.m(q))

    tol = 1e-12 * max(1.0, abs(params.m(q_star)))
    if abs(gap(q_star)) < tol:
        return q_star
    for width in (1e-9, 1e-7, 1e-5, 1e-3):
        a, b = max(q_star - width, dense.t_min), min(q_star + width, dense.t_max)
        if gap(a) * gap(b) < 0:
            return float(brentq(gap, a, b, xtol=1e-15, rtol=8.9e-16))
    return q_star


def _ode_grid(q0: float, q_hi: float, grade_end: bool = False) -> np.ndarray:
    """Sampling grid for the integrated stretch: log-graded near q0, where N
    varies like 1 + kappa q across several decades, then uniform.  With
    ``grade_end`` the far end is log-graded in 1 - q as well, because
    N ~ (1-q)^{R-1} stretches violently toward the tangency at q = 1.
    Density is set by the interpolants built on top: their second
    derivatives ripple at O(spacing^3) between nodes."""
    lo = np.geomspace(q0, max(min(0.1, 0.5 * q_hi), q0), 600)
    mid = np.linspace(q0, q_hi, 1500)
    parts = [lo, mid, np.array([q_hi])]
    if grade_end:
        gap_hi = 1.0 - q_hi
        parts.append(1.0 - np.geomspace(gap_hi, min(0.3, 1.0 - q0), 1000))
    g = np.unique(np.concatenate(parts))
    return g[(g >= q0) & (g <= q_hi)]


def _finalize(
    params: ModelParams,
    sol,
    q_stop: float,
    chi0: float,
    termination: Termination,
    q0: float,
    q_end_gap: float = DEFAULT_Q_END_GAP,
) -> NCurve:
    R = params.R
    d2 = params.delta_sq
    reached_one = termination is Termination.REACHED_ONE
    grid = _ode_grid(q0, q_stop, grade_end=reached_one)
    n = sol.sol(grid)[0]
    den = params.ell(grid) - n
    q_switch = math.inf
    tail_coeff = math.nan

    if reached_one:
        # extend with the tangency expansion on (q_stop, 1 - q_end_gap]
        q_switch = q_stop
        tail_coeff = tangency_coefficient(params)
        gaps = np.geomspace(q_end_gap, 1.0 - q_stop, 1200, endpoint=False)[::-1]
        q_tail = 1.0 - gaps
        n_tail = params.m(q_tail) + tail_coeff * gaps * gaps
        # ell - n = (1-q)[(delta^2/2)(1-R)q - C(1-q)]: no cancellation
        den_tail = gaps * (0.5 * d2 * (1.0 - R) * q_tail - tail_coeff * gaps)
        grid = np.concatenate([grid, q_tail])
        n = np.concatenate([n, n_tail])
        den = np.concatenate([den, den_tail])

    m = params.m(grid)
    ell = params.ell(grid)
    N = n ** (-R) * (1.0 - grid) ** (R - 1.0)
    kappa = (1.0 - R) - R * chi0

    if termination is Termination.CROSSED_M:
        q_star = q_stop
        # exact identity once n(q*) = m(q*): avoids interpolation noise
        h_star = params.m(q_star) ** (-R) * (1.0 - q_star) ** (R - 1.0)
        n[-1] = params.m(q_star)
        N[-1] = h_star
    elif termination is Termination.REACHED_ONE:
        q_star = 1.0
        h_star = math.inf if R < 1 else 0.0
    else:
        q_star = math.nan
        h_star = math.nan

    return NCurve(
        params=params,
        q=grid,
        n=n,
        m=m,
        ell=ell,
        N=N,
        q_star=q_star,
        h_star=h_star,
        kappa=kappa,
        chi0=chi0,
        termination=termination,
        q_switch=q_switch,
        tail_coeff=tail_coeff,
        den=den,
        _sol=sol.sol,
    )


def find_qstar(params: ModelParams, ncurve: NCurve | None = None) -> tuple[float, float]:
    """(q_star, z_star) for the two non-degenerate regimes.

    ThresholdSale: q* in (0,1) from the crossing, z* = q*/(1-q*).
    CashFirst: q* = 1 and z* = +inf (no integration required).
    """
    regime = classify(params)
    if regime is Regime.CASH_FIRST:
        return 1.0, math.inf
    if regime is not Regime.THRESHOLD_SALE:
        raise ParameterError(f"critical ratio undefined in regime {regime}")
    if ncurve is None:
        ncurve = integrate_n(params)
    if ncurve.termination is not Termination.CROSSED_M:
        raise StepFailure(
            f"expected a crossing in the threshold regime, got {ncurve.termination}",
            float(ncurve.q[-1]),
        )
    q_star = ncurve.q_star
    return q_star, q_star / (1.0 - q_star)
