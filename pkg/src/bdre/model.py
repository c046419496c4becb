"""Model parameters, regime classification and the elementary functions shared
by every other module.

The model is the coupled diffusion

    dZ = theta dt + (1/2) sigma_e^2 Z dt + Z dS + sqrt(sigma_b^2 Z) dW_b
    dS = alpha dt + sigma_e dW_e,   S_0 = 0,

with population mass Z >= 0 and environment S.  Everything downstream is a
function of (alpha, sigma_b^2, sigma_e^2) plus the optional immigration
rate theta.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ModelParams",
    "Regime",
    "AsymptoticProfile",
    "classify_regime",
    "f_eval",
    "decay_profile",
]


@dataclass(frozen=True)
class ModelParams:
    """Drift alpha, branching variance rate sigma_b2 > 0, environment variance
    rate sigma_e2 >= 0 and immigration rate theta >= 0 (0 = no immigration).

    Emigration (theta < 0) is rejected: the decomposition into independent
    immigrant families only exists for theta >= 0, and a negative theta can
    absorb at 0 in ways none of the formulas here cover.
    """

    alpha: float
    sigma_b2: float
    sigma_e2: float
    theta: float = 0.0

    def __post_init__(self):
        if not self.sigma_b2 > 0.0:
            raise ValueError(f"sigma_b2 must be > 0, got {self.sigma_b2}")
        if self.sigma_e2 < 0.0:
            raise ValueError(f"sigma_e2 must be >= 0, got {self.sigma_e2}")
        if self.theta < 0.0:
            raise ValueError(f"theta must be >= 0 (no emigration), got {self.theta}")

    @property
    def beta(self) -> float:
        """-2 alpha / sigma_e^2, the drift parameter of the exponential functional."""
        if self.sigma_e2 == 0.0:
            return math.inf if self.alpha < 0 else (-math.inf if self.alpha > 0 else 0.0)
        return -2.0 * self.alpha / self.sigma_e2


class Regime(enum.Enum):
    SUPERCRITICAL = "supercritical"
    CRITICAL = "critical"
    WEAKLY_SUBCRITICAL = "weakly_subcritical"
    INTERMEDIATELY_SUBCRITICAL = "intermediately_subcritical"
    STRONGLY_SUBCRITICAL = "strongly_subcritical"


@dataclass(frozen=True)
class AsymptoticProfile:
    """Decay shape of the survival probability: P(Z_t > 0) ~ const * t^(-poly_power) * exp(-lam*t)."""

    lam: float
    poly_power: float
    beta: float


def classify_regime(params: ModelParams) -> Regime:
    """Five-way classification by the sign of alpha and its position relative
    to -sigma_e^2.  Boundaries are exact floating-point comparisons: callers
    wanting fuzzy boundaries must perturb inputs themselves.
    """
    if params.sigma_e2 == 0.0:
        raise ValueError("degenerate environment: regimes undefined, use classical Feller criteria")
    a, se2 = params.alpha, params.sigma_e2
    if a > 0.0:
        return Regime.SUPERCRITICAL
    if a == 0.0:
        return Regime.CRITICAL
    if a > -se2:
        return Regime.WEAKLY_SUBCRITICAL
    if a == -se2:
        return Regime.INTERMEDIATELY_SUBCRITICAL
    return Regime.STRONGLY_SUBCRITICAL


def f_eval(params: ModelParams, x):
    """f(x) = 1 - exp(-(sigma_e^2/sigma_b^2) x), the survival transform.

    Accepts scalars or arrays; x = +inf maps to 1.  Strictly increasing with
    f(0) = 0 whenever sigma_e2 > 0.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0.0):
        raise ValueError("f_eval requires x >= 0")
    out = -np.expm1(-params.sigma_e2 / params.sigma_b2 * x)
    # exp(-inf * 0) convention: x = inf with sigma_e2 = 0 still yields 0
    if params.sigma_e2 == 0.0:
        out = np.where(np.isinf(x), 0.0, out)
    return float(out) if out.ndim == 0 else out


def decay_profile(params: ModelParams) -> AsymptoticProfile:
    """Exponential rate, polynomial power and beta for the regime of params.

    lam = 0 for alpha >= 0, alpha^2/(2 sigma_e^2) in the weak regime and
    -(alpha + sigma_e^2/2) from the intermediate boundary downward; the two
    subcritical branches agree at alpha = -sigma_e^2.
    """
    regime = classify_regime(params)
    a, se2 = params.alpha, params.sigma_e2
    if regime in (Regime.SUPERCRITICAL, Regime.CRITICAL):
        lam = 0.0
    elif regime is Regime.WEAKLY_SUBCRITICAL:
        lam = a * a / (2.0 * se2)
    else:
        lam = -(a + se2 / 2.0)
    poly = {
        Regime.SUPERCRITICAL: 0.0,
        Regime.CRITICAL: 0.5,
        Regime.WEAKLY_SUBCRITICAL: 1.5,
        Regime.INTERMEDIATELY_SUBCRITICAL: 0.5,
        Regime.STRONGLY_SUBCRITICAL: 0.0,
    }[regime]
    return AsymptoticProfile(lam=lam, poly_power=poly, beta=params.beta)
