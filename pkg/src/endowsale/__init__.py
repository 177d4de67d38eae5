"""Optimal consumption and sale of a risky endowment under CRRA utility.

A CRRA agent holds cash and an endowment of a risky asset that can be sold
but never bought.  The package classifies the parameter regime, constructs
the value function and the optimal policy through a first-order-ODE
crossing problem, simulates the optimal (reflected) dynamics, and verifies
the analytic values by Monte Carlo.
"""

__version__ = "0.1.0"

from .params import (AgentState, ModelParams, ParameterError, Regime,
                     classify, eval_ell, eval_m)
from .ncurve import (NCurve, StepFailure, Termination, find_qstar,
                     initial_slope, integrate_n, phi_quadratic)
from .surface import (GSurface, IllPosedError, SurfaceError, TailError,
                      build_cashfirst_surface, build_surface,
                      build_threshold_surface, eval_W, eval_g, eval_g1,
                      eval_g2, eval_w, hjb_residual, slope_bound_gap,
                      value_function, wode_residual)
from .policy import (MertonIllPosedError, PolicyPoint, certainty_equivalent,
                     consumption, illiquidity_cost, illposed_utility,
                     immediate_sale_units, merton_baseline, policy_point,
                     sde_coefficients)
from .simulate import (MCReport, SimConfig, SimPath, default_horizon,
                       mc_value, simulate_cashfirst,
                       simulate_sell_immediately, simulate_threshold)

__all__ = [
    "AgentState", "ModelParams", "ParameterError", "Regime", "classify",
    "eval_ell", "eval_m",
    "NCurve", "StepFailure", "Termination", "find_qstar", "initial_slope",
    "integrate_n", "phi_quadratic",
    "GSurface", "IllPosedError", "SurfaceError", "TailError",
    "build_cashfirst_surface", "build_surface", "build_threshold_surface",
    "eval_W", "eval_g", "eval_g1", "eval_g2", "eval_w", "hjb_residual",
    "slope_bound_gap", "value_function", "wode_residual",
    "MertonIllPosedError", "PolicyPoint", "certainty_equivalent",
    "consumption", "illiquidity_cost", "illposed_utility",
    "immediate_sale_units", "merton_baseline", "policy_point",
    "sde_coefficients",
    "MCReport", "SimConfig", "SimPath", "default_horizon", "mc_value",
    "simulate_cashfirst", "simulate_sell_immediately", "simulate_threshold",
]
