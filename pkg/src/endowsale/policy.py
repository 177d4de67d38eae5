"""Optimal policy maps and the economic quantities built on the value surface.

Consumption, the certainty-equivalent value of the endowment, the cost of
the no-purchase constraint against the frictionless benchmark, the
frictionless (fixed-fraction) baseline itself, the drift/diffusion
coefficients of the autonomous ratio process, and the closed-form
diverging-utility diagnostic for the ill-posed regime.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .params import AgentState, ModelParams, ParameterError, Regime
from .surface import GSurface, IllPosedError

__all__ = [
    "MertonIllPosedError",
    "PolicyPoint",
    "consumption",
    "certainty_equivalent",
    "illiquidity_cost",
    "merton_baseline",
    "sde_coefficients",
    "illposed_utility",
    "policy_point",
    "immediate_sale_units",
]


class MertonIllPosedError(RuntimeError):
    """The frictionless benchmark has no finite value for these parameters."""


@dataclass(frozen=True)
class PolicyPoint:
    """Policy outputs at a single state."""

    consumption: float
    certainty_equiv: float
    illiq_cost: float
    immediate_sale_units: float
    z_ratio: float


def immediate_sale_units(surface: GSurface, state: AgentState) -> float:
    """Units sold at time zero: everything in the sell-immediately regime,
    the block sale restoring z = z* when the ratio starts above z*, else 0."""
    if surface.regime is Regime.SELL_IMMEDIATELY:
        return state.theta
    z = state.z
    zs = surface.z_star
    if state.theta == 0.0 or z <= zs:
        return 0.0
    if state.x == 0.0:
        # the whole ratio is in the endowment: sell down to the z* split
        return state.theta * (1.0 - zs / (1.0 + zs)) if math.isfinite(zs) else 0.0
    return state.theta * (1.0 - (zs / (1.0 + zs)) * ((1.0 + z) / z))


def consumption(surface: GSurface, state: AgentState) -> float:
    """Optimal consumption rate C(x, y, theta).

    C = x (g(z) - z g'(z)/(1-R))^{-1/R} for x > 0; beta x/R at a zero
    holding; (beta/R) m(1) y theta on the zero-cash boundary of the
    cash-first regime; (beta/R)(x + y theta) when selling immediately.
    A ratio above z* is resolved by the time-zero block sale first (the
    consumption rate is flat along the sale direction, so this matches the
    direct upper-branch evaluation).
    """
    p = surface.params
    beta_over_R = p.beta / p.R
    if surface.regime is Regime.SELL_IMMEDIATELY:
        return beta_over_R * (state.x + state.y * state.theta)
    if state.theta == 0.0:
        return beta_over_R * state.x
    if state.x == 0.0:
        if surface.regime is Regime.CASH_FIRST:
            return beta_over_R * surface.m_one * state.y * state.theta
        # threshold: the block sale moves the state to the interior
        x_after = state.y * state.theta / (1.0 + surface.z_star)
        return x_after * float(surface.consumption_scale(surface.z_star))
    z = min(state.z, surface.z_star) if surface.regime is Regime.THRESHOLD_SALE else state.z
    if z < state.z:
        # evaluate at the post-sale state (x grows by the sale proceeds)
        x_eff = state.x * (1.0 + state.z) / (1.0 + surface.z_star)
        return x_eff * float(surface.consumption_scale(surface.z_star))
    return state.x * float(surface.consumption_scale(z))


def certainty_equivalent(surface: GSurface, state: AgentState) -> float:
    """Cash amount p with V(x + p, y, 0) = V(x, y, theta).

    p = x [g(z)/g(0)]^{1/(1-R)} - x; equals y*theta exactly when selling
    immediately is optimal, and exceeds it otherwise (for theta > 0).
    """
    p = surface.params
    if surface.regime is Regime.SELL_IMMEDIATELY:
        return state.y * state.theta
    if state.theta == 0.0:
        return 0.0
    R = p.R
    if state.x == 0.0:
        lvl = surface.m_qstar ** (R / (R - 1.0))
        return lvl * state.y * state.theta
    g_ratio = float(surface.g(state.z)) / p.g_at_zero
    return state.x * g_ratio ** (1.0 / (1.0 - R)) - state.x


def merton_baseline(params: ModelParams) -> dict:
    """Frictionless fixed-fraction benchmark: the optimal fraction of total
    wealth in the risky asset, the equivalent ratio to cash, and the
    well-posedness coefficient of the frictionless value function."""
    q_m = params.epsilon / (params.delta_sq * params.R)
    if params.epsilon < params.delta_sq * params.R:
        z_m = params.epsilon / (params.delta_sq * params.R - params.epsilon)
    else:
        z_m = math.inf
    coeff = params.beta / params.R - params.alpha**2 * (1.0 - params.R) / (
        2.0 * params.eta**2 * params.R**2
    )
    return {"q_M": q_m, "z_M": z_m, "merton_coeff": coeff}


def illiquidity_cost(surface: GSurface, state: AgentState) -> float:
    """Cash the constrained agent would forgo for frictionless two-sided
    trading: x [1 + z - g(z)^{1/(1-R)} (beta/R - alpha^2(1-R)/(2 eta^2 R^2))^{R/(1-R)}].

    The volatility entering the frictionless benchmark is the endowed
    asset's eta.
    """
    p = surface.params
    if surface.regime not in (Regime.THRESHOLD_SALE, Regime.CASH_FIRST):
        raise ParameterError(
            f"illiquidity cost is defined for the two non-degenerate regimes, not {surface.regime}"
        )
    coeff = merton_baseline(p)["merton_coeff"]
    if coeff <= 0.0:
        raise MertonIllPosedError(
            "the frictionless benchmark value is infinite (its coefficient is <= 0)"
        )
    R = p.R
    lvl = coeff ** (R / (1.0 - R))
    if state.x == 0.0:
        if state.theta == 0.0:
            return 0.0
        # x->0 limit of the closed form: g(z) ~ g0 m^{-R} (1+z)^{1-R}
        m_ref = surface.m_qstar
        wealth = state.y * state.theta
        return wealth * (1.0 - (p.g_at_zero * m_ref ** (-R)) ** (1.0 / (1.0 - R)) * lvl)
    if state.theta == 0.0:
        return state.x * (1.0 - p.g_at_zero ** (1.0 / (1.0 - R)) * lvl)
    z = state.z
    g = float(surface.g(z))
    return state.x * (1.0 + z - g ** (1.0 / (1.0 - R)) * lvl)


def sde_coefficients(surface: GSurface, z) -> dict:
    """Drift and diffusion of the ratio process inside [0, z*], plus the
    reflected forms about the critical ratio.

    Lambda(z) = alpha z + z (g - z g'/(1-R))^{-1/R}, Gamma(z) = eta z;
    LambdaR(j) = Lambda(z* - j), GammaR(j) = Gamma(z* - j).
    """
    if surface.regime is not Regime.THRESHOLD_SALE:
        raise ParameterError("ratio-process coefficients require the ThresholdSale regime")
    p = surface.params
    zs = surface.z_star
    z_arr = np.asarray(z, dtype=float)
    scalar = z_arr.ndim == 0
    z_arr = np.atleast_1d(z_arr)
    if np.any(z_arr < 0.0) or np.any(z_arr > zs * (1.0 + 1e-12)):
        raise ValueError(f"z must lie in [0, z*] = [0, {zs:.6g}]")
    lam = np.zeros_like(z_arr)
    pos = z_arr > 0.0
    if np.any(pos):
        zp = np.minimum(z_arr[pos], zs)
        lam[pos] = p.alpha * zp + zp * np.asarray(surface.consumption_scale(zp))
    gam = p.eta * z_arr
    lam_r = np.zeros_like(z_arr)
    gam_r = np.zeros_like(z_arr)
    j_pos = zs - z_arr > 0.0
    if np.any(j_pos):
        zr = zs - z_arr[j_pos]
        lam_r[j_pos] = p.alpha * zr + zr * np.asarray(surface.consumption_scale(zr))
        gam_r[j_pos] = p.eta * zr
    out = {"Lambda": lam, "Gamma": gam, "Lambda_reflected": lam_r, "Gamma_reflected": gam_r}
    if scalar:
        out = {k: float(v[0]) for k, v in out.items()}
    return out


def illposed_utility(params: ModelParams, phi: float, initial: AgentState) -> float:
    """Expected discounted utility of the constant-rate sale strategy that
    consumes phi * (asset value) and keeps cash constant.

    Returns +inf when the exponent rate beta(1-R)(eps - delta^2 R/2
    - 1/(1-R) - phi/beta) is nonnegative; otherwise the closed form
    (phi y0 theta0)^{1-R} / ((1-R) * (-rate)).  In the ill-posed regime a
    positive rate (or the phi->0 limit at the boundary) certifies an
    infinite value.
    """
    if phi <= 0.0:
        raise ValueError(f"phi must be positive, got {phi}")
    if params.R >= 1:
        raise ParameterError("the diverging-utility diagnostic applies to R < 1 only")
    if initial.theta <= 0.0:
        raise ValueError("the strategy needs a positive initial holding")
    R, beta = params.R, params.beta
    rate = beta * (1.0 - R) * (
        params.epsilon - 0.5 * params.delta_sq * R - 1.0 / (1.0 - R) - phi / beta
    )
    if rate >= 0.0:
        return math.inf
    scale = (phi * initial.y * initial.theta) ** (1.0 - R) / (1.0 - R)
    return scale / (-rate)


def policy_point(surface: GSurface, state: AgentState) -> PolicyPoint:
    """Bundle of the policy outputs at one state."""
    try:
        cost = illiquidity_cost(surface, state)
    except (ParameterError, MertonIllPosedError):
        cost = math.nan
    return PolicyPoint(
        consumption=consumption(surface, state),
        certainty_equiv=certainty_equivalent(surface, state),
        illiq_cost=cost,
        immediate_sale_units=immediate_sale_units(surface, state),
        z_ratio=state.z,
    )
