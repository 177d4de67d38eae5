"""Market and preference parameters, derived quantities, regime classification.

The model: an agent with CRRA coefficient R consumes out of cash wealth and
holds an endowment of a risky asset (drift ``alpha``, volatility ``eta``)
that can be sold but never bought, discounting utility at rate ``beta``.
All downstream analysis keys off the normalized pair

    epsilon  = alpha / beta        (drift per unit of discounting)
    delta_sq = eta**2 / beta       (variance per unit of discounting)

and off a four-way regime label:

* ``SellImmediately`` -- depreciating asset, liquidate at time zero;
* ``ThresholdSale``   -- sell just enough to keep yθ/x at or below a
  finite critical ratio z*;
* ``CashFirst``       -- consume cash down to zero, then finance
  consumption from sales (z* infinite);
* ``IllPosed``        -- expected utility is infinite, no optimum exists.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ParameterError",
    "Regime",
    "ModelParams",
    "AgentState",
    "classify",
    "eval_m",
    "eval_ell",
]


class ParameterError(ValueError):
    """Parameter combination outside the model's domain."""


class Regime(enum.Enum):
    SELL_IMMEDIATELY = "SellImmediately"
    THRESHOLD_SALE = "ThresholdSale"
    CASH_FIRST = "CashFirst"
    ILL_POSED = "IllPosed"

    def __str__(self) -> str:  # CLI prints the bare token
        return self.value


@dataclass(frozen=True)
class ModelParams:
    """Immutable parameter set. Construct via :meth:`from_primitives`,
    :meth:`from_normalized` or :meth:`from_config`.

    ``alpha``/``eta`` are per-unit-time; ``epsilon``/``delta_sq`` are the
    discount-normalized forms used by every formula downstream.
    """

    alpha: float
    eta: float
    beta: float
    R: float

    def __post_init__(self) -> None:
        for name in ("alpha", "eta", "beta", "R"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v)):
                raise ParameterError(f"{name} must be a finite number, got {v!r}")
        if self.eta <= 0:
            raise ParameterError(f"eta must be positive, got {self.eta}")
        if self.beta <= 0:
            raise ParameterError(f"beta must be positive, got {self.beta}")
        if self.R <= 0:
            raise ParameterError(f"R must be positive, got {self.R}")
        if self.R == 1:
            raise ParameterError("R = 1 (log utility) is outside the model")

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_primitives(cls, alpha: float, eta: float, beta: float, R: float) -> "ModelParams":
        return cls(float(alpha), float(eta), float(beta), float(R))

    @classmethod
    def from_normalized(cls, epsilon: float, delta: float, beta: float, R: float) -> "ModelParams":
        """Build from (epsilon, delta, beta, R) with delta = eta/sqrt(beta)."""
        beta = float(beta)
        if beta <= 0:
            raise ParameterError(f"beta must be positive, got {beta}")
        return cls(float(epsilon) * beta, float(delta) * math.sqrt(beta), beta, float(R))

    @classmethod
    def from_config(cls, cfg: dict) -> "ModelParams":
        """Accept either {"alpha", "eta"} or {"epsilon", "delta"} keys plus
        {"beta", "R"}."""
        missing = [k for k in ("beta", "R") if k not in cfg]
        if missing:
            raise ParameterError(f"config missing keys: {missing}")
        beta, R = cfg["beta"], cfg["R"]
        has_prim = "alpha" in cfg or "eta" in cfg
        has_norm = "epsilon" in cfg or "delta" in cfg
        if has_prim and has_norm:
            raise ParameterError(
                "config mixes primitive (alpha/eta) and normalized (epsilon/delta) keys"
            )
        if has_prim:
            if "alpha" not in cfg or "eta" not in cfg:
                raise ParameterError("config needs both alpha and eta")
            return cls.from_primitives(cfg["alpha"], cfg["eta"], beta, R)
        if has_norm:
            if "epsilon" not in cfg or "delta" not in cfg:
                raise ParameterError("config needs both epsilon and delta")
            return cls.from_normalized(cfg["epsilon"], cfg["delta"], beta, R)
        raise ParameterError("config needs either (alpha, eta) or (epsilon, delta)")

    @classmethod
    def from_json(cls, path: str) -> "ModelParams":
        with open(path) as fh:
            return cls.from_config(json.load(fh))

    # -- derived quantities ------------------------------------------------

    @property
    def epsilon(self) -> float:
        return self.alpha / self.beta

    @property
    def delta_sq(self) -> float:
        return self.eta**2 / self.beta

    @property
    def delta(self) -> float:
        return self.eta / math.sqrt(self.beta)

    @property
    def cash_first_bound(self) -> float:
        """epsilon at or above delta_sq*R switches to the cash-first regime."""
        return self.delta_sq * self.R

    @property
    def ill_posed_bound(self) -> float:
        """epsilon at or above this (R < 1 only) makes the value infinite."""
        if self.R >= 1:
            return math.inf
        return self.delta_sq * self.R / 2.0 + 1.0 / (1.0 - self.R)

    @property
    def g_at_zero(self) -> float:
        """Value-surface level at a zero holding: (R/beta)**R."""
        return (self.R / self.beta) ** self.R

    # -- the two quadratics underlying the crossing problem ----------------

    def m(self, q):
        """m(q) = 1 - eps(1-R)q + (delta^2/2) R (1-R) q^2 (no domain check)."""
        q = np.asarray(q, dtype=float)
        R, eps, d2 = self.R, self.epsilon, self.delta_sq
        out = 1.0 - eps * (1.0 - R) * q + 0.5 * d2 * R * (1.0 - R) * q * q
        return out if out.ndim else float(out)

    def ell(self, q):
        """ell(q) = m(q) + q(1-q)(delta^2/2)(1-R) (no domain check)."""
        q = np.asarray(q, dtype=float)
        R, d2 = self.R, self.delta_sq
        out = self.m(q) + q * (1.0 - q) * 0.5 * d2 * (1.0 - R)
        return out if out.ndim else float(out)

    def as_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "eta": self.eta,
            "beta": self.beta,
            "R": self.R,
            "epsilon": self.epsilon,
            "delta": self.delta,
            "delta_sq": self.delta_sq,
        }


def classify(params: ModelParams) -> Regime:
    """Four-way regime label; the inequalities partition the parameter space.

    Boundary conventions: epsilon = 0 sells immediately; epsilon equal to the
    ill-posed bound (R < 1) is ill-posed; epsilon = delta_sq*R is cash-first.
    """
    eps = params.epsilon
    if eps <= 0:
        return Regime.SELL_IMMEDIATELY
    if params.R < 1 and eps >= params.ill_posed_bound:
        return Regime.ILL_POSED
    if eps >= params.cash_first_bound:
        return Regime.CASH_FIRST
    return Regime.THRESHOLD_SALE


def _check_unit_interval(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if np.any(q < 0) or np.any(q > 1):
        raise ValueError("q must lie in [0, 1]")
    return q


def eval_m(q, params: ModelParams):
    """m(q) on [0, 1]; m(0) = 1 and m(1) = ell(1)."""
    return params.m(_check_unit_interval(q))


def eval_ell(q, params: ModelParams):
    """ell(q) on [0, 1]; concave, ell(0) = 1."""
    return params.ell(_check_unit_interval(q))


@dataclass(frozen=True)
class AgentState:
    """State of the agent: cash ``x`` >= 0, asset price ``y`` > 0, holding
    ``theta`` >= 0 and clock ``t`` >= 0."""

    x: float
    y: float = 1.0
    theta: float = 0.0
    t: float = 0.0

    def __post_init__(self) -> None:
        if self.x < 0:
            raise ValueError(f"cash wealth x must be >= 0, got {self.x}")
        if self.y <= 0:
            raise ValueError(f"asset price y must be > 0, got {self.y}")
        if self.theta < 0:
            raise ValueError(f"holding theta must be >= 0, got {self.theta}")
        if self.t < 0:
            raise ValueError(f"time t must be >= 0, got {self.t}")

    @property
    def z(self) -> float:
        """Ratio of wealth in the risky asset to cash, y*theta/x.

        Convention: +inf when x = 0 with a positive holding, 0 when the
        holding is zero.
        """
        if self.theta == 0:
            return 0.0
        if self.x == 0:
            return math.inf
        return self.y * self.theta / self.x
