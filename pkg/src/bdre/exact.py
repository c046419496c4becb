"""Closed-form and quadrature evaluators.

The exact survival probability rests on the law of the exponential
functional A_v = int_0^v exp(2(beta s + W_s)) ds:

    P^z(Z_t > 0) = E[f(z / (2 A_v))] = int f(z a) p_{v,beta}(a) da,
    v = t sigma_e^2 / 4,  beta = -2 alpha / sigma_e^2,

where p_{v,beta} is the density of 1/(2 A_v).  The double-integral form of
p_{v,beta} reduces analytically: its inner integral is

    int_0^inf s^{(beta-1)/2} e^{-a s} (s + cosh^2 xi)^{-(beta+2)/2} ds
        = Gamma(c) U(c, 1/2, a cosh^2 xi) / cosh(xi),     c = (beta+1)/2,

with U the Tricomi confluent hypergeometric function, leaving a single
oscillatory xi-integral of the Hartman-Watson type.  The same reduction
applies to the weak-regime limit kernel phi_beta (with xi in place of the
sine).  At the boundary beta = -1 (c = 0) the Gamma factor diverges, but
the divergent constant integrates to zero against the oscillatory kernel;
the finite remainder is the c -> 0 limit implemented in _quad.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import hyperu

from ._quad import (
    _GL_NODES,
    _GL_WEIGHTS,
    cosh_cos_kernel_integral,
    growth_cutoff,
    oscillation_panels,
    panel_quadrature,
    sinh_sin_kernel_integral,
    sorted_sum,
    u_zero_limit_kernel,
)
from .envpath import EnvPath, time_change
from .errors import AccuracyError, StabilityError
from .model import ModelParams, f_eval

__all__ = [
    "QuadratureSettings",
    "DensityGrid",
    "T_MIN",
    "hartman_watson_theta",
    "joint_density",
    "density_inv_two_A",
    "build_density_grid",
    "phi_beta",
    "laplace_conditional",
    "survival_conditional",
    "survival_exact",
    "gamma_limit",
    "GammaLimit",
]

# Below this intrinsic time the exp(pi^2/2t) prefactor amplifies the
# oscillatory cancellation beyond anything float64 can absorb; refuse
# rather than return garbage.
T_MIN = 0.3


@dataclass(frozen=True)
class QuadratureSettings:
    """Truncation and tolerance policy for the improper oscillatory integrals.

    xi_max = None lets each evaluation pick its cutoff from the integrand's
    envelope (always at least far enough that exp(-xi^2/2v) < 1e-16).
    """

    xi_max: float | None = None
    rel_tol: float = 1e-9
    abs_tol: float = 1e-12
    max_subdivisions: int = 512
    grid_points: int = 400
    a_min: float = 1e-12
    a_max: float = 80.0


DEFAULT_Q = QuadratureSettings()


@dataclass(frozen=True)
class DensityGrid:
    """Density values with quadrature weights: sum(weights * values) ~ integral."""

    abscissae: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    tail_mass_bound: float = 0.0

    def mass(self) -> float:
        return float(np.dot(self.weights, self.values)) + self.tail_mass_bound

    def mean(self) -> float:
        return float(np.dot(self.weights * self.abscissae, self.values))


@dataclass(frozen=True)
class GammaLimit:
    shape: float
    scale: float


def _check_t(t: float):
    if t < T_MIN:
        raise StabilityError(
            f"Hartman-Watson evaluation unstable for small t (t={t} < {T_MIN})"
        )


def _xi_cutoff(v: float, q: QuadratureSettings, log_decay) -> float:
    base = math.sqrt(2.0 * v * 38.0) if q.xi_max is None else q.xi_max
    return max(base, growth_cutoff(v, log_decay))


def hartman_watson_theta(r: float, t: float, q: QuadratureSettings = DEFAULT_Q) -> float:
    """theta_r(t) = r e^{pi^2/2t} / sqrt(2 pi^3 t) *
    int_0^inf e^{-y^2/2t} e^{-r cosh y} sinh(y) sin(pi y/t) dy.

    Constant-subtraction plus the closed-form truncated kernel keep the
    small-r cancellation under control; if the result still sits below the
    roundoff floor the integral is re-done in extended precision.
    """
    if r <= 0.0:
        raise ValueError("r must be positive")
    _check_t(t)
    x_hi = _xi_cutoff(t, q, lambda y: -r * np.cosh(np.minimum(y, 350.0)))
    const = math.exp(-r)

    def integrand(y):
        return (
            np.exp(-y * y / (2.0 * t))
            * np.sinh(y)
            * np.sin(np.pi * y / t)
            * (np.exp(-r * np.cosh(y)) - const)
        )

    edges = oscillation_panels(t, x_hi, period=t)
    total, noise, _ = panel_quadrature(integrand, edges)
    total += const * sinh_sin_kernel_integral(t, x_hi)
    if abs(total) < 1e3 * noise:
        total = _hw_integral_mp(r, t, x_hi)
    pref = r / math.sqrt(2.0 * math.pi**3 * t) * math.exp(math.pi**2 / (2.0 * t))
    return pref * total


def _hw_integral_mp(r: float, t: float, x_hi: float) -> float:
    """Extended-precision fallback for the oscillatory integral (rare corner:
    small r and t near T_MIN, where the true value is below the float64
    cancellation floor)."""
    import mpmath as mp

    with mp.workdps(40):
        r_, t_ = mp.mpf(r), mp.mpf(t)
        f = lambda y: (
            mp.e ** (-y * y / (2 * t_) - r_ * mp.cosh(y)) * mp.sinh(y) * mp.sin(mp.pi * y / t_)
        )
        pts = [k * t_ for k in range(int(x_hi / t) + 1)] + [mp.mpf(x_hi)]
        return float(mp.quad(f, pts))


def joint_density(
    beta: float, t: float, x: float, u: float, q: QuadratureSettings = DEFAULT_Q
) -> float:
    """Density of (A_t, W_t + beta t) at (u, x), A_t the exponential functional.

    The drift enters only through the change-of-measure tilt
    exp(beta x - beta^2 t / 2) of the driftless kernel
    (1/u) exp(-(1 + e^{2x})/(2u)) theta_{e^x/u}(t).
    """
    if u <= 0.0:
        raise ValueError("u must be positive")
    _check_t(t)
    if 2.0 * x > 700.0:
        return 0.0
    log_tilt = beta * x - beta * beta * t / 2.0
    log_front = -math.log(u) - (1.0 + math.exp(2.0 * x)) / (2.0 * u)
    if log_tilt + log_front < -700.0:
        return 0.0  # essential singularity at u -> 0 dominates everything
    r = math.exp(x) / u
    return math.exp(log_tilt + log_front) * hartman_watson_theta(r, t, q)


def _density_kernel(c: float, w: np.ndarray, base_w: float) -> np.ndarray:
    """Gamma(c) [U(c, 1/2, w) - U(c, 1/2, base_w)], continued to c = 0.

    The subtracted constant is restored exactly through the closed-form
    kernel integral by the caller; subtracting the value at the panel floor
    removes the common mode that otherwise swamps small-a evaluations.
    """
    if c == 0.0:
        return u_zero_limit_kernel(w) - _density_base_term(c, base_w)
    return gamma_fn(c) * (hyperu(c, 0.5, w) - hyperu(c, 0.5, base_w))


def _density_base_term(c: float, base_w: float) -> float:
    """Gamma(c) U(c, 1/2, base_w), continued to c = 0 relative to the kernel split."""
    if c == 0.0:
        return float(u_zero_limit_kernel(np.atleast_1d(base_w))[0])
    return float(gamma_fn(c) * hyperu(c, 0.5, base_w))


def _log_u_decay(c: float, a: float):
    """Vectorized log-scale bound for U(c, 1/2, a cosh^2 xi) ~ (a cosh^2 xi)^{-c}."""

    def decay(xi):
        xi = np.minimum(xi, 350.0)
        logw = np.log(max(a, 1e-300)) + 2.0 * (np.logaddexp(xi, -xi) - np.log(2.0))
        return np.minimum(-c * logw, 0.0)

    return decay


def _panel_loop(edges: np.ndarray, kern_fn, g_fn) -> tuple[float, float, float]:
    """sum of int kern*g per panel plus magnitude diagnostics.

    Returns (total, max panel magnitude, int |kern|): the last two feed the
    noise-floor model (GL roundoff plus special-function error amplified by
    the oscillatory cancellation).
    """
    vals = np.empty(len(edges) - 1)
    abs_kern = 0.0
    for i, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
        mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
        xi = mid + half * _GL_NODES
        w = half * _GL_WEIGHTS
        kern = kern_fn(xi)
        vals[i] = float(np.dot(w, kern * g_fn(xi)))
        abs_kern += float(np.dot(w, np.abs(kern)))
    total = sorted_sum(vals)
    return total, float(np.max(np.abs(vals))) if len(vals) else 0.0, abs_kern


def _density_general(v: float, beta: float, a: float, q: QuadratureSettings) -> tuple[float, float]:
    """General-drift density of 1/(2 A_v) at a, via the reduced single integral.

    Returns (value, noise floor); valid for beta >= -1 (beta = -1 by
    analytic continuation).
    """
    c = (beta + 1.0) / 2.0
    x_hi = _xi_cutoff(v, q, _log_u_decay(c, a)) + max(0.0, -beta) * v
    base = _density_base_term(c, a)

    def kern_fn(xi):
        return np.exp(-xi * xi / (2.0 * v)) * np.sinh(xi) * np.sin(np.pi * xi / v)

    def g_fn(xi):
        return _density_kernel(c, a * np.cosh(xi) ** 2, a)

    edges = oscillation_panels(v, x_hi, period=v)
    total, max_panel, abs_kern = _panel_loop(edges, kern_fn, g_fn)
    total += base * sinh_sin_kernel_integral(v, x_hi)
    eps = np.finfo(float).eps
    # hyperu carries ~1e-14 relative error; against the oscillatory kernel it
    # acts like an absolute error of that size times int |kern|
    noise = eps * max_panel + 5e-14 * (abs(base) + 1.0) * abs_kern
    log_pref = (
        -beta * beta * v / 2.0
        + math.pi**2 / (2.0 * v)
        - math.log(math.sqrt(2.0) * math.pi**2 * math.sqrt(v))
        + math.lgamma((beta + 2.0) / 2.0)
        - a
        - (beta + 1.0) / 2.0 * math.log(a)
    )
    pref = math.exp(log_pref)
    return pref * total, pref * noise


def _density_critical(v: float, a: float, q: QuadratureSettings) -> tuple[float, float]:
    """Driftless density of 1/(2 A_v) at a via the single cosh-cos integral."""
    const = math.exp(-a)  # value of exp(-a cosh^2 y) at y = 0

    def kern_fn(y):
        return np.exp(-y * y / (2.0 * v)) * np.cosh(y) * np.cos(np.pi * y / (2.0 * v))

    def g_fn(y):
        return np.exp(-a * np.cosh(y) ** 2) - const

    def decay(y):
        return -a * np.cosh(np.minimum(y, 350.0)) ** 2

    x_hi = _xi_cutoff(v, q, decay)
    edges = oscillation_panels(v, x_hi, period=v)  # cos zeros at odd multiples of v; v-panels suffice
    total, max_panel, abs_kern = _panel_loop(edges, kern_fn, g_fn)
    total += const * cosh_cos_kernel_integral(v, x_hi)
    eps = np.finfo(float).eps
    noise = eps * (max_panel + const * abs_kern)
    pref = math.sqrt(2.0) * math.exp(math.pi**2 / (8.0 * v)) / math.sqrt(math.pi**2 * v) / math.sqrt(a)
    return pref * total, pref * noise


def density_inv_two_A(
    v: float,
    beta: float,
    a: float,
    q: QuadratureSettings = DEFAULT_Q,
    force_general: bool = False,
) -> float:
    """Pointwise density of 1/(2 A_v^{(beta)}) at a > 0.

    The drift parameter must satisfy beta >= -1; the boundary value -1 is
    evaluated by analytic continuation of the kernel (the marginalization
    identity behind this density requires beta > -1, and the continuation
    is cross-checked against Monte Carlo in the test suite).  beta = 0 is
    routed through the better-conditioned driftless formula unless
    force_general is set.
    """
    if a <= 0.0:
        raise ValueError("a must be positive")
    if beta < -1.0:
        raise ValueError(f"density of 1/(2A) requires beta >= -1, got {beta}")
    _check_t(v)
    if beta == 0.0 and not force_general:
        val, noise = _density_critical(v, a, q)
    else:
        val, noise = _density_general(v, beta, a, q)
    floor = max(q.abs_tol, 10.0 * noise)
    if abs(val) <= floor:
        # indistinguishable from zero at the cancellation floor; noise here is
        # signed, so positive excursions must be dropped as well as negative
        return 0.0
    if val < 0.0:
        raise AccuracyError(
            f"density quadrature returned {val} at (v={v}, beta={beta}, a={a}), "
            f"beyond the noise floor {noise:g}"
        )
    return val


def _log_grid(lo: float, hi: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Points and trapezoid weights for integration in log space: sum(w*f) ~ int f da."""
    la = np.linspace(math.log(lo), math.log(hi), n)
    a = np.exp(la)
    w = np.empty(n)
    dla = la[1] - la[0]
    w[0] = w[-1] = 0.5 * dla
    w[1:-1] = dla
    return a, w * a


def _grid_bounds(v: float, beta: float, q: QuadratureSettings) -> tuple[float, float]:
    # bulk of 1/(2A) sits near exp(-2 beta v) for beta > 0, near O(1) otherwise
    lo = q.a_min
    if beta > 0.0:
        lo = min(lo, math.exp(-2.0 * beta * v - 10.0 * math.sqrt(v) - 3.0))
    return lo, q.a_max


def build_density_grid(
    v: float, beta: float, q: QuadratureSettings = DEFAULT_Q, n: int | None = None
) -> DensityGrid:
    """Tabulate p_{v,beta} on a log grid wide enough to hold all its mass.

    Negative quadrature noise is clamped to zero point by point (each point
    is verified against its own noise floor first).
    """
    n = q.grid_points if n is None else n
    lo, hi = _grid_bounds(v, beta, q)
    a, w = _log_grid(lo, hi, n)
    vals = np.array([density_inv_two_A(v, beta, x, q) for x in a])
    # analytic envelope bound on the mass above the grid: p <= C e^{-a} a^{-(b+1)/2}
    p_hi = vals[-1]
    tail = p_hi * hi / max(1.0, hi - (beta + 1.0) / 2.0) if p_hi > 0 else 0.0
    return DensityGrid(abscissae=a, weights=w, values=vals, tail_mass_bound=tail)


def phi_beta(beta: float, a: float, q: QuadratureSettings = DEFAULT_Q) -> float:
    """Weak-regime limit kernel:

    phi_beta(a) = Gamma((beta+2)/2) Gamma((beta+1)/2) / (sqrt(2) pi)
                  * e^{-a} a^{-(beta+1)/2}
                  * int_0^inf xi sinh(xi) U((beta+1)/2, 1/2, a cosh^2 xi) dxi,

    the analytically reduced form of the defining double integral.
    """
    if not (0.0 < beta < 2.0):
        raise ValueError(f"phi_beta requires beta in (0, 2), got {beta}")
    if a <= 0.0:
        raise ValueError("a must be positive")
    c = (beta + 1.0) / 2.0
    # positive unimodal integrand: grows ~ xi e^xi while a cosh^2 xi < 1, then
    # decays ~ e^{-beta xi}; panel densely to the knee, geometrically beyond
    knee = max(1.0, math.acosh(1.0 / math.sqrt(a)) if a < 1.0 else 1.0)
    x_hi = knee + (46.0 + math.log1p(knee)) / beta

    def integrand(xi):
        return xi * np.sinh(xi) * hyperu(c, 0.5, a * np.cosh(xi) ** 2)

    edges = np.unique(
        np.concatenate(
            [np.linspace(0.0, knee, 8), knee + np.geomspace(1.0, x_hi - knee, 14)]
        )
    )
    total, _, _ = panel_quadrature(integrand, edges)
    log_pref = (
        math.lgamma((beta + 2.0) / 2.0)
        + math.lgamma(c)
        - math.log(math.sqrt(2.0) * math.pi)
        - a
        - c * math.log(a)
    )
    return math.exp(log_pref) * total


def laplace_conditional(
    params: ModelParams, z: float, lam: float, path: EnvPath
) -> float:
    """E[exp(-lam Z_t) | environment path] for the process started at z.

    Conventions at the edges: lam = 0 gives 1, lam = inf gives the
    conditional extinction probability.
    """
    if params.theta != 0.0:
        raise ValueError("Laplace transform with immigration is not available")
    if z < 0.0 or lam < 0.0:
        raise ValueError("z and lam must be nonnegative")
    if len(path.values) == 0:
        raise ValueError("empty environment path")
    integral = _half_branching_integral(params, path)
    if lam == 0.0:
        return 1.0
    if math.isinf(lam):
        denom = integral
    else:
        denom = integral + math.exp(-path.values[-1]) / lam
    if denom == 0.0:
        return 1.0 if z == 0.0 else 0.0
    return math.exp(-z / denom)


def _half_branching_integral(params: ModelParams, path: EnvPath) -> float:
    tau = time_change(path, params.sigma_b2)
    return 0.5 * float(tau.tau_values[-1])


def survival_conditional(params: ModelParams, z: float, path: EnvPath) -> float:
    """P(Z_t > 0 | environment path) = 1 - exp(-z / int_0^t (sigma_b^2/2) e^{-S} ds)."""
    if params.theta != 0.0:
        raise ValueError("conditional survival formula requires theta = 0")
    if z < 0.0:
        raise ValueError("z must be nonnegative")
    if len(path.values) == 0:
        raise ValueError("empty environment path")
    integral = _half_branching_integral(params, path)
    if integral == 0.0:
        return 0.0 if z == 0.0 else 1.0
    return -math.expm1(-z / integral)


def survival_exact(
    params: ModelParams, z: float, t: float, q: QuadratureSettings = DEFAULT_Q
) -> float:
    """Unconditional survival probability P^z(Z_t > 0) by quadrature.

    Integrates f(z a) against the density of 1/(2 A_{t sigma_e^2/4}) with an
    analytic bound (f <= 1 and the e^{-a} envelope) covering the truncated
    tail.  Requires sigma_e^2 > 0, theta = 0 and beta >= -1.
    """
    if params.sigma_e2 <= 0.0:
        raise ValueError("survival_exact requires sigma_e2 > 0")
    if params.theta != 0.0:
        raise ValueError("survival_exact requires theta = 0")
    if z < 0.0:
        raise ValueError("z must be nonnegative")
    beta = params.beta
    if beta < -1.0:
        raise ValueError(
            f"survival formula invalid for beta < -1 (alpha > sigma_e^2/2): beta={beta}"
        )
    v = t * params.sigma_e2 / 4.0
    _check_t(v)
    if z == 0.0:
        return 0.0
    grid = build_density_grid(v, beta, q)
    fa = f_eval(params, z * grid.abscissae)
    val = float(np.dot(grid.weights * fa, grid.values)) + grid.tail_mass_bound
    return min(max(val, 0.0), 1.0)


def gamma_limit(a: float, b: float) -> GammaLimit:
    """Law of (int_0^inf exp(a B_s - b s) ds)^{-1}: Gamma(shape 2b/a^2, scale a^2/2)."""
    if a == 0.0:
        raise ValueError("a must be nonzero")
    if b <= 0.0:
        raise ValueError("b must be positive: the integral diverges otherwise")
    return GammaLimit(shape=2.0 * b / (a * a), scale=a * a / 2.0)
