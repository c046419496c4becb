"""Regime-dependent limiting constants vartheta(z), their derivatives, and the
environment drift of the process conditioned on non-extinction.

vartheta is the limit of the normalized survival probability:

    supercritical:   1 - (1 + (se2/sb2) z)^(-2 alpha / se2)
    critical:        sqrt(2/pi) / se * log(1 + (se2/sb2) z)
    weak:            (8/se^3) int f(z a) phi_beta(a) da
    intermediate:    z sqrt(2) se / (sqrt(pi) sb2)
    strong:          2 z (-alpha - se2) / sb2

The conditioned process carries the extra environment drift
se2 * z vartheta'(z)/vartheta(z), which decreases strictly from se2 at 0 to
max(-alpha, 0) at infinity (and is identically se2 from the intermediate
boundary downward).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exact import DEFAULT_Q, QuadratureSettings, phi_beta
from .model import AsymptoticProfile, ModelParams, Regime, classify_regime, decay_profile

__all__ = ["ThetaEvaluator"]

# Master grid for the weak-regime kernel: wide enough that f(z a) completes
# its rise within the grid for any z the simulators can reach.
_GRID_LO = 1e-9
_GRID_HI = 60.0
_GRID_N = 3000


@dataclass(frozen=True)
class _WeakGrid:
    a: np.ndarray
    log_weights: np.ndarray  # trapezoid weights in log a, times a
    phi: np.ndarray
    head_power: float  # local fit phi ~ A a^(-p) below the grid
    head_coef: float


class ThetaEvaluator:
    """vartheta, vartheta', their ratio, and the conditioned environment drift.

    Construction is the only expensive step (the weak regime tabulates
    phi_beta once); instances are immutable and shareable.
    """

    def __init__(self, params: ModelParams, q: QuadratureSettings = DEFAULT_Q):
        self.params = params
        self.regime: Regime = classify_regime(params)
        self.profile: AsymptoticProfile = decay_profile(params)
        self._cf = params.sigma_e2 / params.sigma_b2
        self._se3 = params.sigma_e2 ** 1.5
        self._grid: _WeakGrid | None = None
        if self.regime is Regime.WEAKLY_SUBCRITICAL:
            self._grid = self._build_weak_grid(q)

    # -- construction -----------------------------------------------------

    def _build_weak_grid(self, q: QuadratureSettings) -> _WeakGrid:
        beta = self.profile.beta
        la = np.linspace(math.log(_GRID_LO), math.log(_GRID_HI), _GRID_N)
        a = np.exp(la)
        dla = la[1] - la[0]
        w = np.full(_GRID_N, dla)
        w[0] = w[-1] = 0.5 * dla
        phi = np.array([phi_beta(beta, x, q) for x in a])
        # phi ~ A a^{-p} (p ~ beta/2 + 1, logarithmic factor absorbed locally)
        p = -math.log(phi[8] / phi[0]) / (la[8] - la[0])
        coef = phi[0] * a[0] ** p
        return _WeakGrid(a=a, log_weights=w * a, phi=phi, head_power=p, head_coef=coef)

    # -- vartheta and derivative ------------------------------------------

    def vartheta(self, z):
        """Limiting constant, vectorized over z >= 0; vartheta(0) = 0."""
        z = np.asarray(z, dtype=float)
        if np.any(z < 0.0):
            raise ValueError("vartheta requires z >= 0")
        pp = self.params
        if self.regime is Regime.SUPERCRITICAL:
            nu = 2.0 * pp.alpha / pp.sigma_e2
            out = -np.expm1(-nu * np.log1p(self._cf * z))
        elif self.regime is Regime.CRITICAL:
            out = math.sqrt(2.0 / math.pi) / math.sqrt(pp.sigma_e2) * np.log1p(self._cf * z)
        elif self.regime is Regime.INTERMEDIATELY_SUBCRITICAL:
            out = z * math.sqrt(2.0 * pp.sigma_e2 / math.pi) / pp.sigma_b2
        elif self.regime is Regime.STRONGLY_SUBCRITICAL:
            out = z * 2.0 * (-pp.alpha - pp.sigma_e2) / pp.sigma_b2
        else:
            out = self._weak_integral(z, order=0)
        return float(out) if out.ndim == 0 else out

    def vartheta_prime(self, z):
        """d vartheta / dz, by the differentiated integrand in the weak regime."""
        z = np.asarray(z, dtype=float)
        if np.any(z < 0.0):
            raise ValueError("vartheta_prime requires z >= 0")
        pp = self.params
        if self.regime is Regime.SUPERCRITICAL:
            nu = 2.0 * pp.alpha / pp.sigma_e2
            out = nu * self._cf * np.exp(-(nu + 1.0) * np.log1p(self._cf * z))
        elif self.regime is Regime.CRITICAL:
            out = math.sqrt(2.0 / math.pi) / math.sqrt(pp.sigma_e2) * self._cf / (1.0 + self._cf * z)
        elif self.regime is Regime.INTERMEDIATELY_SUBCRITICAL:
            out = np.full_like(z, math.sqrt(2.0 * pp.sigma_e2 / math.pi) / pp.sigma_b2)
        elif self.regime is Regime.STRONGLY_SUBCRITICAL:
            out = np.full_like(z, 2.0 * (-pp.alpha - pp.sigma_e2) / pp.sigma_b2)
        else:
            out = self._weak_integral(z, order=1)
        return float(out) if out.ndim == 0 else out

    def _weak_integral(self, z: np.ndarray, order: int, chunk: int = 2048):
        """(8/se^3) int f^{(n)}(z a) a^n phi(a) da on the cached grid.

        The sliver below the grid floor is added analytically from the local
        power fit (f is linear there for every reachable z).
        """
        g = self._grid
        z1 = np.atleast_1d(z)
        out = np.empty(z1.shape)
        base = g.log_weights * g.phi
        for lo in range(0, z1.size, chunk):
            zz = z1[lo : lo + chunk, None]
            x = self._cf * zz * g.a
            if order == 0:
                vals = -np.expm1(-x)
            else:
                vals = self._cf * g.a * np.exp(-x)
            out[lo : lo + chunk] = vals @ base
        # head: below the grid f(za) ~ cf z a and f'(za) ~ cf, so the integrand
        # is ~ cf a phi(a) (times z for order 0) with phi ~ A a^{-p}
        p = g.head_power
        if p < 2.0:
            head = self._cf * g.head_coef * _GRID_LO ** (2.0 - p) / (2.0 - p)
            out = out + (head * z1 if order == 0 else head)
        out *= 8.0 / self._se3
        return out.reshape(np.shape(z))

    # -- conditioned drift -------------------------------------------------

    def ratio(self, z):
        """z vartheta'(z) / vartheta(z) with the limit 1 at z = 0.

        Strictly decreasing from 1 to max(-alpha, 0)/se2 above the
        intermediate boundary; identically 1 at and below it.
        """
        z = np.asarray(z, dtype=float)
        if np.any(z < 0.0):
            raise ValueError("ratio requires z >= 0")
        pp = self.params
        if self.regime in (Regime.INTERMEDIATELY_SUBCRITICAL, Regime.STRONGLY_SUBCRITICAL):
            out = np.ones_like(z)
        elif self.regime is Regime.SUPERCRITICAL:
            nu = 2.0 * pp.alpha / pp.sigma_e2
            x = self._cf * z
            with np.errstate(invalid="ignore"):
                out = np.where(
                    x > 0.0,
                    nu * x / (1.0 + x) / np.expm1(nu * np.log1p(x)),
                    1.0,
                )
        elif self.regime is Regime.CRITICAL:
            x = self._cf * z
            with np.errstate(invalid="ignore"):
                out = np.where(x > 0.0, x / (1.0 + x) / np.log1p(x), 1.0)
        else:
            num = self._weak_integral(z, order=1)
            den = self._weak_integral(z, order=0)
            with np.errstate(invalid="ignore", divide="ignore"):
                out = np.where(den > 0.0, np.asarray(z) * num / den, 1.0)
        return float(out) if out.ndim == 0 else out

    def hdrift(self, z):
        """Extra environment drift of the conditioned process: se2 * ratio(z).

        z = 0 returns the analytic limit se2; negative z is a domain error.
        """
        return self.params.sigma_e2 * self.ratio(z)

    def ratio_interpolant(self, z_lo: float = 1e-10, z_hi: float = 1e8, n: int = 1600):
        """Fast vectorized ratio over log-spaced z, linear in log z, clamped ends.

        Used by the conditioned-SDE stepper, which needs the ratio for a
        whole replica block every step.
        """
        if self.regime in (Regime.INTERMEDIATELY_SUBCRITICAL, Regime.STRONGLY_SUBCRITICAL):
            return lambda z: np.ones_like(np.asarray(z, dtype=float))
        lz = np.linspace(math.log(z_lo), math.log(z_hi), n)
        rz = self.ratio(np.exp(lz))

        def interp(z):
            z = np.asarray(z, dtype=float)
            return np.interp(np.log(np.maximum(z, 1e-300)), lz, rz, left=1.0, right=rz[-1])

        return interp

    # -- weak-regime growth constants ---------------------------------------

    def weak_growth_constants(self) -> tuple[float, float]:
        """(c_theta, c_theta_prime): the large-z growth constants

        vartheta(z) ~ c_theta z^{beta/2} log z,
        z vartheta'(z) ~ c_theta_prime z^{beta/2} log z,

        with c_theta = (2/beta) sqrt(2 pi) / (se^3 sin(pi beta/2)) (se2/sb2)^{beta/2}
        and c_theta_prime = (beta/2) c_theta.
        """
        if self.regime is not Regime.WEAKLY_SUBCRITICAL:
            raise ValueError("growth constants are defined in the weakly subcritical regime only")
        beta = self.profile.beta
        c_theta = (
            2.0
            / beta
            * math.sqrt(2.0 * math.pi)
            / (self._se3 * math.sin(math.pi * beta / 2.0))
            * self._cf ** (beta / 2.0)
        )
        return c_theta, beta / 2.0 * c_theta
