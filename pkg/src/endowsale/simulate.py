"""Simulation of the optimal dynamics and Monte Carlo verification.

Three path laws, one per well-posed regime:

* threshold sale: the gap J = z* - Z between the critical ratio and the
  current ratio follows an autonomous reflected diffusion; its local time
  at zero drives the sales, Theta = Theta0 exp(-L/(z*(1+z*))), and cash is
  recovered from X = Y Theta / Z;
* cash first: consume cash until it hits zero (the crossing time is located
  by linear interpolation inside the step), then finance consumption from
  sales with Theta decaying at rate (beta/R) m(1);
* sell immediately: a deterministic path, X_t = (x0+y0 theta0) e^{-beta t/R}.

The price path is exact geometric Brownian motion on the same increments.
Per-path discounted utility accrues by the trapezoid rule and is compared
against the analytic value; the report carries the truncation bound implied
by the exponential decay of the remaining value.

Reflection step: the default "reflect" maps the Euler proposal J' to |J'|
with local-time increment |J'| - J' (exact for driftless reflected Brownian
motion, weak order one); "project" clips at zero with increment (-J')^+.
Projection underweights local time by roughly half per boundary step, which
shows up as a visible bias in the sale stream at practical step sizes, so
it is kept only as a cross-check scheme.

Noise is drawn chunk-by-chunk from a single seeded generator in a fixed
(path, step) layout: results are byte-reproducible for a given seed, paths
are independent rows that could be evaluated concurrently, and aggregation
uses compensated summation so it is order-independent.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .params import AgentState, Regime
from .surface import GSurface, value_function

__all__ = [
    "SimConfig",
    "SimPath",
    "MCReport",
    "default_horizon",
    "simulate_threshold",
    "simulate_cashfirst",
    "simulate_sell_immediately",
    "mc_value",
]

_NTAB = 8193  # consumption-table resolution (uniform grid, linear interp)

try:  # pragma: no cover - exercised implicitly by every kernel call
    import numba
    from numba import njit

    if os.environ.get("ENDOWSALE_THREADS"):
        numba.set_num_threads(max(1, int(os.environ["ENDOWSALE_THREADS"])))
    _HAVE_NUMBA = True
except Exception:  # pragma: no cover
    _HAVE_NUMBA = False


@dataclass(frozen=True)
class SimConfig:
    """Discretization and sampling controls for the Monte Carlo engine."""

    dt: float = 1e-3
    horizon: float | None = None  # None: derived from the value-decay bound
    n_paths: int = 1
    seed: int = 0
    antithetic: bool = False
    scheme: str = "reflect"  # "reflect" | "project"
    block_steps: int = 512   # noise chunk length (memory knob)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.horizon is not None and self.horizon < self.dt:
            raise ValueError("horizon must be at least one step")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.antithetic and self.n_paths % 2:
            raise ValueError("antithetic sampling needs an even n_paths")
        if self.scheme not in ("reflect", "project"):
            raise ValueError(f"unknown reflection scheme {self.scheme!r}")


@dataclass
class SimPath:
    """Recorded trajectory on the simulation grid."""

    t: np.ndarray
    Y: np.ndarray
    J: np.ndarray
    L: np.ndarray
    Theta: np.ndarray
    X: np.ndarray
    C: np.ndarray
    U: np.ndarray          # running discounted utility (trapezoid)
    path_id: int = 0


@dataclass
class MCReport:
    """Aggregate Monte Carlo estimate against the analytic value."""

    estimate: float
    std_error: float
    n_paths: int
    truncation_bound: float
    analytic_value: float
    z_score: float
    horizon: float
    dt: float
    seed: int
    scheme: str
    regime: str
    diagnostics: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = {
            "estimate": self.estimate,
            "std_error": self.std_error,
            "n_paths": self.n_paths,
            "truncation_bound": self.truncation_bound,
            "analytic_value": self.analytic_value,
            "z_score": self.z_score,
            "horizon": self.horizon,
            "dt": self.dt,
            "seed": self.seed,
            "scheme": self.scheme,
            "regime": self.regime,
        }
        for k, v in self.diagnostics.items():
            if isinstance(v, (int, float)):
                d[f"diag_{k}"] = v
        return d


def default_horizon(surface: GSurface, tol: float = 1e-6) -> float:
    """Horizon T with exp(-beta T min(1, m_ref)) below tol, m_ref being the
    crossing level that bounds the per-time decay of the remaining value."""
    p = surface.params
    m_ref = min(1.0, surface.m_qstar)
    return math.log(1.0 / tol) / (p.beta * m_ref)


def _resolve_grid(cfg: SimConfig, surface: GSurface) -> tuple[float, int]:
    T = cfg.horizon if cfg.horizon is not None else default_horizon(surface)
    n_steps = max(1, int(round(T / cfg.dt)))
    return n_steps * cfg.dt, n_steps


# ---------------------------------------------------------------------------
# consumption tables (uniform grids, linear interpolation in the kernels)
# ---------------------------------------------------------------------------


def _threshold_table(surface: GSurface) -> np.ndarray:
    """c(z) = consumption per unit cash on the uniform grid over [0, z*]."""
    p = surface.params
    zt = np.linspace(0.0, surface.z_star, _NTAB)
    ct = np.empty(_NTAB)
    ct[0] = p.beta / p.R
    ct[1:] = np.asarray(surface.consumption_scale(zt[1:]))
    return ct


def _cashfirst_table(surface: GSurface) -> np.ndarray:
    """rho(s) = C/(x + y theta) on the uniform grid of the risky fraction
    s = y theta/(x + y theta); bounded at both ends, so cash exhaustion
    needs no special casing in the stepper."""
    p = surface.params
    st = np.linspace(0.0, 1.0, _NTAB)
    rt = np.empty(_NTAB)
    rt[0] = p.beta / p.R
    rt[-1] = p.beta * surface.m_one / p.R
    z = st[1:-1] / (1.0 - st[1:-1])
    rt[1:-1] = np.asarray(surface.consumption_scale(z)) / (1.0 + z)
    return rt


# ---------------------------------------------------------------------------
# step kernels
# ---------------------------------------------------------------------------

# The same functions run compiled (numba) or interpreted (fallback); they are
# written in plain scalar numpy/math for that reason.


def _threshold_chunk_py(J, L, Y, Th, X, ci, f, U, sumr2, offbound, zclip,
                        noise, yratio, decay, ctab, zs, inv_dz, alpha,
                        eta_sqdt, dt, invk, onemR, inv1mR, jtol, reflect):
    n_paths, nsteps = noise.shape
    ntab = ctab.shape[0]
    zfloor = zs * 1e-12
    for i in range(n_paths):
        Ji = J[i]; Li = L[i]; Yi = Y[i]; Thi = Th[i]; Xi = X[i]
        cii = ci[i]; fi = f[i]; Ui = U[i]; s2 = sumr2[i]
        ob = offbound[i]; zc = zclip[i]
        for j in range(nsteps):
            Z = zs - Ji
            Jp = Ji - Z * ((alpha + cii) * dt + eta_sqdt * noise[i, j])
            if reflect:
                Jn = -Jp if Jp < 0.0 else Jp
                dL = Jn - Jp
            else:
                dL = -Jp if Jp < 0.0 else 0.0
                Jn = Jp + dL
            if Jn > zs:
                Jn = zs
                zc += 1
            Thn = Thi
            if dL > 0.0:
                Li += dL
                Thn = Thi * math.exp(-dL * invk)
                if Jn >= jtol:
                    ob += 1
            Yn = Yi * yratio[i, j]
            Zn = zs - Jn
            if Zn < zfloor:
                Zn = zfloor
                zc += 1
            Xn = Yn * Thn / Zn
            pos = Zn * inv_dz
            k = int(pos)
            if k >= ntab - 1:
                k = ntab - 2
            w = pos - k
            cn = ctab[k] * (1.0 - w) + ctab[k + 1] * w
            # budget residual per step, relative to current wealth
            r = (Xn - Xi + cii * Xi * dt + Yn * (Thn - Thi)) / Xn
            s2 += r * r
            Cn = Xn * cn
            if onemR == 0.5:
                fn = decay[j + 1] * math.sqrt(Cn) * inv1mR
            else:
                fn = decay[j + 1] * Cn**onemR * inv1mR
            Ui += 0.5 * dt * (fi + fn)
            Ji = Jn; Yi = Yn; Thi = Thn; Xi = Xn; cii = cn; fi = fn
        J[i] = Ji; L[i] = Li; Y[i] = Yi; Th[i] = Thi; X[i] = Xi
        ci[i] = cii; f[i] = fi; U[i] = Ui; sumr2[i] = s2
        offbound[i] = ob; zclip[i] = zc


def _cashfirst_chunk_py(X, Y, Th, phase, tau, C, f, U, yratio, decay,
                        rtab, inv_ds, theta0, k1, th_decay, dt,
                        onemR, inv1mR, t0):
    n_paths, nsteps = yratio.shape
    ntab = rtab.shape[0]
    for i in range(n_paths):
        Xi = X[i]; Yi = Y[i]; Thi = Th[i]; ph = phase[i]
        Ci = C[i]; fi = f[i]; Ui = U[i]; ti = tau[i]
        for j in range(nsteps):
            Yn = Yi * yratio[i, j]
            if ph == 0:
                Xn = Xi - Ci * dt
                if Xn <= 0.0:
                    # crossing inside the step: locate tau by interpolation
                    frac = Xi / (Ci * dt)
                    ti = t0 + (j + frac) * dt
                    Ui += fi * frac * dt
                    ph = 1
                    Xi = 0.0
                    Thi = theta0 * math.exp(-k1 * (1.0 - frac) * dt)
                    Cn = k1 * Yn * Thi
                    if onemR == 0.5:
                        fn = decay[j + 1] * math.sqrt(Cn) * inv1mR
                    else:
                        fn = decay[j + 1] * Cn**onemR * inv1mR
                    Ui += fn * (1.0 - frac) * dt
                    Yi = Yn; Ci = Cn; fi = fn
                    continue
                wealth = Xn + Yn * theta0
                s = Yn * theta0 / wealth
                pos = s * inv_ds
                k = int(pos)
                if k >= ntab - 1:
                    k = ntab - 2
                w = pos - k
                Cn = wealth * (rtab[k] * (1.0 - w) + rtab[k + 1] * w)
                if onemR == 0.5:
                    fn = decay[j + 1] * math.sqrt(Cn) * inv1mR
                else:
                    fn = decay[j + 1] * Cn**onemR * inv1mR
                Ui += 0.5 * dt * (fi + fn)
                Xi = Xn; Yi = Yn; Ci = Cn; fi = fn
            else:
                Thi = Thi * th_decay
                Cn = k1 * Yn * Thi
                if onemR == 0.5:
                    fn = decay[j + 1] * math.sqrt(Cn) * inv1mR
                else:
                    fn = decay[j + 1] * Cn**onemR * inv1mR
                Ui += 0.5 * dt * (fi + fn)
                Yi = Yn; Ci = Cn; fi = fn
        X[i] = Xi; Y[i] = Yi; Th[i] = Thi; phase[i] = ph
        C[i] = Ci; f[i] = fi; U[i] = Ui; tau[i] = ti


if _HAVE_NUMBA:
    _threshold_chunk = njit(cache=True, fastmath=True)(_threshold_chunk_py)
    _cashfirst_chunk = njit(cache=True, fastmath=True)(_cashfirst_chunk_py)
else:  # pragma: no cover
    _threshold_chunk = _threshold_chunk_py
    _cashfirst_chunk = _cashfirst_chunk_py


# ---------------------------------------------------------------------------
# chunked drivers
# ---------------------------------------------------------------------------


def _draw_chunk(rng, n_paths: int, nsteps: int, antithetic: bool) -> np.ndarray:
    # float32 increments: the draw dominates single-core runtime, and the
    # f32 rounding of an increment (~6e-8 relative) is far below the
    # discretization error
    out = np.empty((n_paths, nsteps), dtype=np.float32)
    if antithetic:
        half = n_paths // 2
        rng.standard_normal(out=out[:half], dtype=np.float32)
        np.negative(out[:half], out=out[half:])
    else:
        rng.standard_normal(out=out, dtype=np.float32)
    return out


def _price_ratios(xi: np.ndarray, ydrift: float, eta_sqdt: float) -> np.ndarray:
    if xi.dtype == np.float32:
        arg = np.float32(ydrift) + np.float32(eta_sqdt) * xi
        return np.exp(arg, out=arg)
    return np.exp(ydrift + eta_sqdt * xi)


def _initial_threshold_state(surface: GSurface, initial: AgentState):
    """Apply the time-zero block sale if the ratio starts above z*."""
    zs = surface.z_star
    z0 = initial.z
    if initial.theta <= 0.0:
        raise ValueError("threshold simulation needs a positive initial holding")
    if z0 > zs:
        th0 = initial.theta * (zs / (1.0 + zs)) * ((1.0 + z0) / z0 if math.isfinite(z0) else 1.0)
        x0 = initial.x + initial.y * (initial.theta - th0)
        j0 = 0.0
    else:
        th0 = initial.theta
        x0 = initial.x
        j0 = zs - z0
    return j0, x0, th0


def _run_threshold(surface: GSurface, initial: AgentState, cfg: SimConfig,
                   noise: np.ndarray | None = None):
    """Chunked kernel driver; returns per-path utilities and diagnostics."""
    p = surface.params
    R = p.R
    zs = surface.z_star
    T, n_steps = _resolve_grid(cfg, surface)
    n = cfg.n_paths
    ctab = _threshold_table(surface)
    inv_dz = (_NTAB - 1) / zs
    j0, x0, th0 = _initial_threshold_state(surface, initial)
    jtol = 10.0 * p.eta * zs * math.sqrt(cfg.dt)
    invk = 1.0 / (zs * (1.0 + zs))
    onemR = 1.0 - R
    inv1mR = 1.0 / onemR
    eta_sqdt = p.eta * math.sqrt(cfg.dt)
    ydrift = (p.alpha - 0.5 * p.eta**2) * cfg.dt

    J = np.full(n, j0)
    L = np.zeros(n)
    Y = np.full(n, float(initial.y))
    Th = np.full(n, th0)
    X = np.full(n, x0)
    z0_eff = zs - j0
    c0 = ctab[0] if z0_eff == 0.0 else float(surface.consumption_scale(z0_eff))
    ci = np.full(n, c0)
    f = (x0 * ci) ** onemR * inv1mR
    U = np.zeros(n)
    sumr2 = np.zeros(n)
    offbound = np.zeros(n, dtype=np.int64)
    zclip = np.zeros(n, dtype=np.int64)

    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    reflect = cfg.scheme == "reflect"
    done = 0
    while done < n_steps:
        m_chunk = min(cfg.block_steps, n_steps - done)
        if noise is None:
            xi = _draw_chunk(rng, n, m_chunk, cfg.antithetic)
        else:
            xi = np.ascontiguousarray(noise[:, done:done + m_chunk])
        yratio = _price_ratios(xi, ydrift, eta_sqdt)
        t0 = done * cfg.dt
        decay = np.exp(-p.beta * (t0 + cfg.dt * np.arange(m_chunk + 1)))
        _threshold_chunk(J, L, Y, Th, X, ci, f, U, sumr2, offbound, zclip,
                         xi, yratio, decay, ctab, zs, inv_dz, p.alpha,
                         eta_sqdt, cfg.dt, invk, onemR, inv1mR, jtol, reflect)
        done += m_chunk
    if not np.all(np.isfinite(U)):
        raise FloatingPointError("simulation produced non-finite utilities")

    theta_identity = np.abs(Th - th0 * np.exp(-L * invk)) / np.maximum(Th, 1e-300)
    diags = {
        "budget_rms": np.sqrt(sumr2 / n_steps),
        "theta_identity_err": theta_identity,
        "offbound_steps": offbound,
        "zclip_steps": zclip,
        "L_end": L,
        "theta_end": Th,
        "theta_start": th0,
    }
    return U, T, diags


def _run_cashfirst(surface: GSurface, initial: AgentState, cfg: SimConfig,
                   noise: np.ndarray | None = None):
    p = surface.params
    R = p.R
    T, n_steps = _resolve_grid(cfg, surface)
    n = cfg.n_paths
    rtab = _cashfirst_table(surface)
    inv_ds = float(_NTAB - 1)
    theta0 = float(initial.theta)
    if theta0 <= 0.0:
        raise ValueError("cash-first simulation needs a positive initial holding")
    k1 = p.beta * surface.m_one / p.R
    th_decay = math.exp(-k1 * cfg.dt)
    onemR = 1.0 - R
    inv1mR = 1.0 / onemR
    eta_sqdt = p.eta * math.sqrt(cfg.dt)
    ydrift = (p.alpha - 0.5 * p.eta**2) * cfg.dt

    X = np.full(n, float(initial.x))
    Y = np.full(n, float(initial.y))
    Th = np.full(n, theta0)
    phase = np.zeros(n, dtype=np.int64)
    tau = np.full(n, math.nan)
    if initial.x == 0.0:
        phase[:] = 1
        tau[:] = 0.0
        C = k1 * Y * Th
    else:
        wealth = X + Y * theta0
        s0 = Y * theta0 / wealth
        C = wealth * np.interp(s0, np.linspace(0.0, 1.0, _NTAB), rtab)
    f = C**onemR * inv1mR
    U = np.zeros(n)

    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    done = 0
    while done < n_steps:
        m_chunk = min(cfg.block_steps, n_steps - done)
        if noise is None:
            xi = _draw_chunk(rng, n, m_chunk, cfg.antithetic)
        else:
            xi = np.ascontiguousarray(noise[:, done:done + m_chunk])
        yratio = _price_ratios(xi, ydrift, eta_sqdt)
        t0 = done * cfg.dt
        decay = np.exp(-p.beta * (t0 + cfg.dt * np.arange(m_chunk + 1)))
        _cashfirst_chunk(X, Y, Th, phase, tau, C, f, U, yratio, decay,
                         rtab, inv_ds, theta0, k1, th_decay, cfg.dt,
                         onemR, inv1mR, t0)
        done += m_chunk
    if not np.all(np.isfinite(U)):
        raise FloatingPointError("simulation produced non-finite utilities")

    diags = {"tau": tau, "phase": phase, "X_end": X, "theta_end": Th}
    return U, T, diags


def _run_deterministic(surface: GSurface, initial: AgentState, cfg: SimConfig):
    """Sell-immediately (or zero-holding) path: X_t = w0 e^{-beta t/R}.

    The realized utility is the same for every path; the trapezoid sum over
    the grid converges to the closed form as dt -> 0.
    """
    p = surface.params
    R = p.R
    T, n_steps = _resolve_grid(cfg, surface)
    w0 = initial.x + initial.y * initial.theta
    if w0 <= 0.0:
        raise ValueError("simulation needs positive initial total wealth")
    t = cfg.dt * np.arange(n_steps + 1)
    flow = np.exp(-p.beta * t) * ((p.beta / R) * w0 * np.exp(-p.beta * t / R)) ** (1.0 - R) / (1.0 - R)
    u = float(np.trapezoid(flow, dx=cfg.dt))
    return np.full(cfg.n_paths, u), T, {}


# ---------------------------------------------------------------------------
# recorders: full per-step trajectories for small path counts
# ---------------------------------------------------------------------------


def simulate_threshold(surface: GSurface, initial: AgentState, cfg: SimConfig,
                       noise: np.ndarray | None = None):
    """Yield full SimPath records under the threshold-sale dynamics.

    Reference implementation of the same stepping as the fast kernel; meant
    for dumps and invariant tests at small path counts.
    """
    if surface.regime is not Regime.THRESHOLD_SALE:
        raise ValueError("simulate_threshold needs a ThresholdSale surface")
    p = surface.params
    R = p.R
    zs = surface.z_star
    T, n_steps = _resolve_grid(cfg, surface)
    ctab = _threshold_table(surface)
    ztab = np.linspace(0.0, zs, _NTAB)
    j0, x0, th0 = _initial_threshold_state(surface, initial)
    invk = 1.0 / (zs * (1.0 + zs))
    sqdt = math.sqrt(cfg.dt)
    ydrift = (p.alpha - 0.5 * p.eta**2) * cfg.dt
    reflect = cfg.scheme == "reflect"
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    t = cfg.dt * np.arange(n_steps + 1)
    disc = np.exp(-p.beta * t)

    for pid in range(cfg.n_paths):
        xi = rng.standard_normal(n_steps) if noise is None else noise[pid]
        J = np.empty(n_steps + 1); L = np.empty(n_steps + 1)
        Y = np.empty(n_steps + 1); Th = np.empty(n_steps + 1)
        X = np.empty(n_steps + 1); C = np.empty(n_steps + 1)
        U = np.empty(n_steps + 1)
        J[0], L[0], Y[0], Th[0], X[0] = j0, 0.0, initial.y, th0, x0
        C[0] = x0 * float(np.interp(zs - j0, ztab, ctab))
        U[0] = 0.0
        fprev = C[0] ** (1.0 - R) / (1.0 - R)
        for k in range(n_steps):
            Z = zs - J[k]
            lam = Z * (p.alpha + C[k] / X[k])
            Jp = J[k] - lam * cfg.dt - p.eta * Z * sqdt * xi[k]
            if reflect:
                Jn = abs(Jp); dL = Jn - Jp
            else:
                dL = max(-Jp, 0.0); Jn = Jp + dL
            Jn = min(Jn, zs)
            L[k + 1] = L[k] + dL
            Th[k + 1] = Th[k] * math.exp(-dL * invk) if dL > 0.0 else Th[k]
            Y[k + 1] = Y[k] * math.exp(ydrift + p.eta * sqdt * xi[k])
            Zn = max(zs - Jn, zs * 1e-12)
            J[k + 1] = Jn
            X[k + 1] = Y[k + 1] * Th[k + 1] / Zn
            C[k + 1] = X[k + 1] * float(np.interp(Zn, ztab, ctab))
            fnew = disc[k + 1] * C[k + 1] ** (1.0 - R) / (1.0 - R)
            U[k + 1] = U[k] + 0.5 * cfg.dt * (fprev + fnew)
            fprev = fnew
        yield SimPath(t=t, Y=Y, J=J, L=L, Theta=Th, X=X, C=C, U=U, path_id=pid)


def simulate_cashfirst(surface: GSurface, initial: AgentState, cfg: SimConfig,
                       noise: np.ndarray | None = None):
    """Yield full SimPath records under the cash-first dynamics."""
    if surface.regime is not Regime.CASH_FIRST:
        raise ValueError("simulate_cashfirst needs a CashFirst surface")
    p = surface.params
    R = p.R
    T, n_steps = _resolve_grid(cfg, surface)
    rtab = _cashfirst_table(surface)
    stab = np.linspace(0.0, 1.0, _NTAB)
    theta0 = float(initial.theta)
    if theta0 <= 0.0:
        raise ValueError("cash-first simulation needs a positive initial holding")
    k1 = p.beta * surface.m_one / p.R
    sqdt = math.sqrt(cfg.dt)
    ydrift = (p.alpha - 0.5 * p.eta**2) * cfg.dt
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    t = cfg.dt * np.arange(n_steps + 1)
    disc = np.exp(-p.beta * t)

    for pid in range(cfg.n_paths):
        xi = rng.standard_normal(n_steps) if noise is None else noise[pid]
        Y = np.empty(n_steps + 1); Th = np.empty(n_steps + 1)
        X = np.empty(n_steps + 1); C = np.empty(n_steps + 1)
        U = np.empty(n_steps + 1)
        Y[0], Th[0], X[0] = initial.y, theta0, initial.x
        phase = 1 if initial.x == 0.0 else 0
        if phase:
            C[0] = k1 * Y[0] * theta0
        else:
            w = X[0] + Y[0] * theta0
            C[0] = w * float(np.interp(Y[0] * theta0 / w, stab, rtab))
        U[0] = 0.0
        fprev = C[0] ** (1.0 - R) / (1.0 - R)
        for k in range(n_steps):
            Y[k + 1] = Y[k] * math.exp(ydrift + p.eta * sqdt * xi[k])
            if phase == 0:
                Xn = X[k] - C[k] * cfg.dt
                if Xn <= 0.0:
                    frac = X[k] / (C[k] * cfg.dt)
                    U_partial = fprev * frac * cfg.dt
                    phase = 1
                    X[k + 1] = 0.0
                    Th[k + 1] = theta0 * math.exp(-k1 * (1.0 - frac) * cfg.dt)
                    C[k + 1] = k1 * Y[k + 1] * Th[k + 1]
                    fnew = disc[k + 1] * C[k + 1] ** (1.0 - R) / (1.0 - R)
                    U[k + 1] = U[k] + U_partial + fnew * (1.0 - frac) * cfg.dt
                    fprev = fnew
                    continue
                X[k + 1] = Xn
                Th[k + 1] = theta0
                w = Xn + Y[k + 1] * theta0
                C[k + 1] = w * float(np.interp(Y[k + 1] * theta0 / w, stab, rtab))
            else:
                X[k + 1] = 0.0
                Th[k + 1] = Th[k] * math.exp(-k1 * cfg.dt)
                C[k + 1] = k1 * Y[k + 1] * Th[k + 1]
            fnew = disc[k + 1] * C[k + 1] ** (1.0 - R) / (1.0 - R)
            U[k + 1] = U[k] + 0.5 * cfg.dt * (fprev + fnew)
            fprev = fnew
        zeros = np.zeros(n_steps + 1)
        yield SimPath(t=t, Y=Y, J=zeros, L=zeros.copy(), Theta=Th, X=X, C=C, U=U,
                      path_id=pid)


def simulate_sell_immediately(surface: GSurface, initial: AgentState,
                              cfg: SimConfig) -> SimPath:
    """Deterministic optimal path after liquidating the holding at t = 0."""
    p = surface.params
    R = p.R
    T, n_steps = _resolve_grid(cfg, surface)
    w0 = initial.x + initial.y * initial.theta
    t = cfg.dt * np.arange(n_steps + 1)
    X = w0 * np.exp(-p.beta * t / R)
    C = (p.beta / R) * X
    flow = np.exp(-p.beta * t) * C ** (1.0 - R) / (1.0 - R)
    U = np.concatenate([[0.0], np.cumsum(0.5 * cfg.dt * (flow[1:] + flow[:-1]))])
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    xi = rng.standard_normal(n_steps)
    Y = initial.y * np.exp(
        np.concatenate([[0.0], np.cumsum((p.alpha - 0.5 * p.eta**2) * cfg.dt
                                         + p.eta * math.sqrt(cfg.dt) * xi)])
    )
    zeros = np.zeros(n_steps + 1)
    return SimPath(t=t, Y=Y, J=zeros, L=zeros.copy(), Theta=zeros.copy(), X=X, C=C,
                   U=U, path_id=0)


# ---------------------------------------------------------------------------
# Monte Carlo aggregation
# ---------------------------------------------------------------------------


def _aggregate(U: np.ndarray, antithetic: bool) -> tuple[float, float]:
    if antithetic:
        half = len(U) // 2
        U = 0.5 * (U[:half] + U[half:])
    est = math.fsum(U) / len(U)
    if len(U) > 1:
        se = float(np.std(U, ddof=1)) / math.sqrt(len(U))
    else:
        se = 0.0
    return est, se


def mc_value(surface: GSurface, initial: AgentState, cfg: SimConfig,
             noise: np.ndarray | None = None) -> MCReport:
    """Estimate expected discounted utility under the optimal policy and
    compare it against the analytic value function."""
    analytic = value_function(surface, initial)
    regime = surface.regime
    if initial.theta == 0.0 or regime is Regime.SELL_IMMEDIATELY:
        U, T, diags = _run_deterministic(surface, initial, cfg)
        est, _ = _aggregate(U, False)
        se = 0.0  # identical paths by construction; z_score pinned to 0
    elif regime is Regime.THRESHOLD_SALE:
        U, T, diags = _run_threshold(surface, initial, cfg, noise)
        est, se = _aggregate(U, cfg.antithetic)
    elif regime is Regime.CASH_FIRST:
        U, T, diags = _run_cashfirst(surface, initial, cfg, noise)
        est, se = _aggregate(U, cfg.antithetic)
    else:
        raise ValueError(f"cannot simulate the {regime} regime")

    p = surface.params
    trunc = abs(analytic) * math.exp(-p.beta * T * min(1.0, surface.m_qstar))
    z = (est - analytic) / se if se > 0.0 else 0.0
    diag_summary: dict = {"U": U}
    for key, val in diags.items():
        if isinstance(val, np.ndarray) and val.dtype.kind == "f":
            finite = val[np.isfinite(val)]
            diag_summary[key] = val
            diag_summary[f"max_{key}"] = float(np.max(finite)) if finite.size else math.nan
        elif isinstance(val, np.ndarray):
            diag_summary[key] = val
            diag_summary[f"total_{key}"] = int(np.sum(val))
        else:
            diag_summary[key] = val
    diag_summary["min_path_utility"] = float(np.min(U))
    diag_summary["max_path_utility"] = float(np.max(U))
    return MCReport(
        estimate=est,
        std_error=se,
        n_paths=cfg.n_paths,
        truncation_bound=trunc,
        analytic_value=analytic,
        z_score=float(z),
        horizon=T,
        dt=cfg.dt,
        seed=cfg.seed,
        scheme=cfg.scheme,
        regime=regime.value,
        diagnostics=diag_summary,
    )
