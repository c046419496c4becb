"""Shared machinery for the Hartman-Watson family of oscillatory integrals.

All integrals here have the shape

    int_0^inf exp(-xi^2/(2v)) * h(xi) * osc(xi) * g(xi) dxi

where osc is sin(pi xi / v) or cos(pi xi / (2v)), h is sinh or cosh, and g
decays in xi.  Two facts drive the implementation:

* For integer hyperbolic order the pure kernel integrates to exactly zero
  over [0, inf).  Subtracting a constant from g therefore changes nothing
  analytically but removes the common-mode term that dominates the
  floating-point cancellation when g is nearly constant (small arguments).
* The truncated kernel integral int_0^X has a closed form in terms of the
  complex error function, so the subtracted constant can be restored
  exactly no matter where the numerical integration stops.

Panels are aligned with the zeros of the oscillation and summed in
increasing magnitude order.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf, erfcx, roots_legendre

_GL_NODES, _GL_WEIGHTS = roots_legendre(40)


def sorted_sum(values: np.ndarray) -> float:
    """Sum in increasing-magnitude order (cheap compensated accumulation)."""
    v = np.asarray(values, dtype=float).ravel()
    return float(np.sum(v[np.argsort(np.abs(v))]))


def gauss_exp_integral(mu: complex, v: float, x_hi: float) -> complex:
    """int_0^X exp(-y^2/(2v) + mu*y) dy for complex mu."""
    s = np.sqrt(2.0 * v)
    return (
        s
        * np.sqrt(np.pi)
        / 2.0
        * np.exp(mu * mu * v / 2.0)
        * (erf((x_hi - mu * v) / s) + erf(mu * v / s))
    )


def sinh_sin_kernel_integral(v: float, x_hi: float) -> float:
    """int_0^X exp(-xi^2/2v) sinh(xi) sin(pi xi/v) dxi; tends to 0 as X -> inf."""
    k = np.pi / v
    tot = 0j
    for sign_h, sign_o, sgn in ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)):
        tot += sgn * gauss_exp_integral(sign_h + 1j * sign_o * k, v, x_hi)
    return (tot / 4j).real


def cosh_cos_kernel_integral(v: float, x_hi: float) -> float:
    """int_0^X exp(-y^2/2v) cosh(y) cos(pi y/(2v)) dy; tends to 0 as X -> inf."""
    k = np.pi / (2.0 * v)
    tot = 0j
    for sign_h in (1, -1):
        for sign_o in (1, -1):
            tot += gauss_exp_integral(sign_h + 1j * sign_o * k, v, x_hi)
    return (tot / 4.0).real


def oscillation_panels(v: float, x_hi: float, period: float) -> np.ndarray:
    """Panel edges [0, period, 2*period, ..., x_hi] aligned to oscillation zeros."""
    if x_hi <= 0.0:
        raise ValueError("cutoff must be positive")
    n_full = int(np.floor(x_hi / period))
    edges = period * np.arange(n_full + 1, dtype=float)
    if x_hi - edges[-1] > 1e-12 * max(1.0, x_hi):
        edges = np.append(edges, x_hi)
    if len(edges) < 2:
        edges = np.array([0.0, x_hi])
    return edges


def panel_quadrature(fn, edges: np.ndarray) -> tuple[float, float, int]:
    """Gauss-Legendre per panel; returns (sorted sum, noise scale, n_panels).

    The noise scale is eps * max panel magnitude: differences below it are
    indistinguishable from roundoff in the accumulated sum.
    """
    vals = np.empty(len(edges) - 1)
    for i, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
        mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
        vals[i] = half * float(np.dot(_GL_WEIGHTS, fn(mid + half * _GL_NODES)))
    total = sorted_sum(vals)
    noise = np.finfo(float).eps * (np.max(np.abs(vals)) if len(vals) else 0.0)
    return total, noise, len(vals)


def growth_cutoff(v: float, log_decay, lo_bound: float = 1e-6, safety: float = 42.0) -> float:
    """Smallest X with envelope exp(xi - xi^2/2v + log_decay(xi)) down by e^-safety.

    log_decay must be a vectorized, nonincreasing log-scale damping term
    (e.g. from the hypergeometric tail or exp(-r cosh)).
    """
    hi = 2.0 * v + 20.0 * np.sqrt(v) + 60.0
    xi = np.linspace(lo_bound, hi, 4096)
    logenv = xi - xi * xi / (2.0 * v) + log_decay(xi)
    peak = logenv.max()
    above = np.nonzero(logenv > peak - safety)[0]
    return float(xi[above[-1]]) if len(above) else 10.0


def u_zero_limit_kernel(w: np.ndarray) -> np.ndarray:
    """lim_{c->0} Gamma(c) [U(c,1/2,w) - U(c,1/2,0)] = -2 sqrt(pi) int_0^sqrt(w) erfcx(x) dx.

    U is Tricomi's confluent hypergeometric function; this is the analytic
    continuation of the density kernel to the boundary drift value.
    """
    w = np.asarray(w, dtype=float)
    y = np.sqrt(w)
    # near part [0, min(y, 6)]: erfcx is smooth, fixed Gauss-Legendre
    near = np.minimum(y, 6.0)
    half = 0.5 * near
    nodes = half[..., None] * (_GL_NODES + 1.0)
    vals = np.sum(_GL_WEIGHTS * erfcx(nodes), axis=-1) * half
    # far part [6, y]: erfcx ~ 1/(sqrt(pi) x), integrate in log x
    far = y > 6.0
    if np.any(far):
        yf = y[far] if y.ndim else np.asarray([y])[:1]
        lo, hi = np.log(6.0), np.log(yf)
        mid, hw = 0.5 * (hi + lo), 0.5 * (hi - lo)
        u = mid[..., None] + hw[..., None] * _GL_NODES
        x = np.exp(u)
        tail = np.sum(_GL_WEIGHTS * erfcx(x) * x, axis=-1) * hw
        if y.ndim:
            vals[far] += tail
        else:
            vals = vals + tail[0]
    return -2.0 * np.sqrt(np.pi) * vals
