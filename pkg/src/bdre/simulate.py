"""Monte Carlo engines: Euler-Maruyama for the coupled system, the
time-change construction, the conditioned process, reweighted-semigroup
estimation, scale-function boundary classification, and the subcritical
stationary density.

Scheme notes.  Full-truncation Euler everywhere: drift and diffusion
coefficients are evaluated at max(Z, 0).  For theta = 0 a step landing at
or below zero absorbs the path at exactly 0 (0 is absorbing and a positive
threshold would bias survival estimates).  With immigration (theta > 0, or
the conditioned process, whose immigration term is sigma_b^2) zero is an
entrance boundary, so the state is clamped upward instead of absorbed.

Replicas run in fixed-size blocks with block-keyed random streams, so
estimates are bit-stable for a given (seed, n) no matter how many workers
consume the blocks.  Block results are combined in block order.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .asymptotics import ThetaEvaluator
from .errors import AccuracyError
from .model import ModelParams, Regime
from .rng import BLOCK, SeedRecord, num_workers, replica_blocks, stream

__all__ = [
    "TrajectorySet",
    "McEstimate",
    "default_dt",
    "simulate_bdre",
    "simulate_via_time_change",
    "mc_survival",
    "simulate_conditioned",
    "reweighted_expectation",
    "scale_function",
    "boundary_classification",
    "BoundaryClassification",
    "stationary_density",
    "stationary_cdf",
]

Z_FLOOR = 1e-12  # guards ratio evaluations near 0 in the conditioned scheme


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n: int


@dataclass(frozen=True)
class TrajectorySet:
    """Batch of (Z, S) paths recorded on a uniform output grid.

    absorbed_at[i] is the first grid-internal time path i hit zero (nan if
    it never did); Z is identically zero from that time on.
    """

    dt: float
    horizon: float
    z: np.ndarray
    s: np.ndarray
    absorbed_at: np.ndarray
    seed_record: SeedRecord

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.z.shape[1])

    @property
    def n_paths(self) -> int:
        return self.z.shape[0]

    def final_z(self) -> np.ndarray:
        return self.z[:, -1]


def default_dt(params: ModelParams) -> float:
    """1e-3 * min(1, 1/(|alpha| + sigma_e^2)): keeps per-step drift displacement small."""
    scale = abs(params.alpha) + params.sigma_e2
    return 1e-3 * min(1.0, 1.0 / scale) if scale > 0 else 1e-3


def _record_grid(horizon: float, dt: float, record_dt: float | None) -> tuple[int, int]:
    """(steps per substep, number of recorded points after t=0)."""
    m = int(round(horizon / dt))
    if m < 1:
        raise ValueError("dt must not exceed horizon")
    if record_dt is None:
        every = max(1, m // 512)
    else:
        every = max(1, int(round(record_dt / dt)))
    n_rec = m // every
    return every, n_rec


def _run_blocks(n: int, block_fn):
    """Run block_fn(block_idx, start, count) over all blocks, optionally threaded.

    Results are combined in block order regardless of completion order.
    """
    blocks = list(replica_blocks(n))
    workers = num_workers()
    if workers == 1 or len(blocks) == 1:
        return [block_fn(*b) for b in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futs = [pool.submit(block_fn, *b) for b in blocks]
        return [f.result() for f in futs]


# ---------------------------------------------------------------------------
# direct Euler of the coupled system
# ---------------------------------------------------------------------------


def _euler_block(
    alpha, se2, sb2, theta, z0, m, dt, every, n_rec, rng, count, noise_chunk=256
):
    """One replica block of the coupled scheme; returns (z_rec, s_rec, absorbed_at)."""
    sdt_e = math.sqrt(se2 * dt)
    sdt_b = math.sqrt(sb2 * dt)
    z = np.full(count, float(z0))
    s = np.zeros(count)
    z_rec = np.empty((count, n_rec + 1))
    s_rec = np.empty((count, n_rec + 1))
    z_rec[:, 0] = z
    s_rec[:, 0] = s
    absorbed = np.full(count, np.nan)
    k_rec = 1
    for k0 in range(0, m, noise_chunk):
        k1 = min(k0 + noise_chunk, m)
        noise = rng.standard_normal((k1 - k0, 2, count))
        for k in range(k0, k1):
            ne, nb = noise[k - k0]
            zp = np.maximum(z, 0.0)
            ds = alpha * dt + sdt_e * ne
            z = z + theta * dt + 0.5 * se2 * zp * dt + zp * ds + sdt_b * np.sqrt(zp) * nb
            s += ds
            if theta == 0.0:
                hit = z <= 0.0
                if hit.any():
                    newly = hit & np.isnan(absorbed)
                    absorbed[newly] = (k + 1) * dt
                    z[hit] = 0.0
            else:
                np.maximum(z, 0.0, out=z)
            if (k + 1) % every == 0:
                z_rec[:, k_rec] = z
                s_rec[:, k_rec] = s
                k_rec += 1
    return z_rec, s_rec, absorbed


def simulate_bdre(
    params: ModelParams,
    z0: float,
    horizon: float,
    dt: float,
    n: int,
    seed: int,
    record_dt: float | None = None,
) -> TrajectorySet:
    """Euler-Maruyama of the coupled (Z, S) system with shared environment noise.

    The same W_e increment drives both equations within a path.  Paths are
    recorded every record_dt (default: ~512 points over the horizon).
    """
    if z0 < 0.0:
        raise ValueError("z0 must be nonnegative")
    if dt >= horizon:
        raise ValueError("dt must be smaller than horizon")
    every, n_rec = _record_grid(horizon, dt, record_dt)
    m = int(round(horizon / dt))

    def block_fn(bidx, start, count):
        rng = stream(seed, 0xBD, bidx)
        return _euler_block(
            params.alpha, params.sigma_e2, params.sigma_b2, params.theta,
            z0, m, dt, every, n_rec, rng, count,
        )

    parts = _run_blocks(n, block_fn)
    return TrajectorySet(
        dt=every * dt,
        horizon=m * dt,
        z=np.vstack([p[0] for p in parts]),
        s=np.vstack([p[1] for p in parts]),
        absorbed_at=np.concatenate([p[2] for p in parts]),
        seed_record=SeedRecord(seed, (0xBD,)),
    )


# ---------------------------------------------------------------------------
# time-change construction
# ---------------------------------------------------------------------------

_MAX_F_STEPS = 65536  # per-replica cap; beyond it the Feller clock coarsens


def feller_at_times(rng, x0: float, targets: np.ndarray, dt: float, drift: float, absorb: bool):
    """Values of dF = drift dt + sqrt(max(F,0)) dW at per-replica target times.

    targets is (n, R) with nondecreasing rows starting at 0; each replica
    runs its own uniform clock to its last target (step widened only past
    the per-replica step cap), values at targets are linearly interpolated
    between the bracketing steps, paths absorb at 0 when absorb is set.
    Returns (values (n, R), absorption_time (n,), inf if never absorbed).
    """
    targets = np.asarray(targets, dtype=float)
    n, n_targets = targets.shape
    t_end = targets[:, -1]
    dts = np.maximum(dt, t_end / _MAX_F_STEPS)
    n_steps = np.maximum(np.ceil(t_end / dts - 1e-12).astype(int), 1)
    out = np.zeros((n, n_targets))
    out[:, 0] = x0
    ptr = np.ones(n, dtype=int)
    # replicas whose only target is t=0
    ptr[t_end <= 0.0] = n_targets
    cur = np.full(n, float(x0))
    step = np.zeros(n, dtype=int)
    death = np.full(n, np.inf)
    active = np.nonzero(ptr < n_targets)[0]
    while active.size:
        d = dts[active]
        c0 = cur[active]
        c1 = c0 + drift * d + np.sqrt(np.maximum(c0, 0.0) * d) * rng.standard_normal(active.size)
        if absorb:
            dead = c1 <= 0.0
            c1[dead] = 0.0
        else:
            np.maximum(c1, 0.0, out=c1)
            dead = np.zeros(active.size, dtype=bool)
        t0 = step[active] * d
        t1 = t0 + d
        # serve all targets inside (t0, t1]
        while True:
            p = ptr[active]
            open_ = p < n_targets
            tgt = targets[active, np.minimum(p, n_targets - 1)]
            hit = open_ & (tgt <= t1 + 1e-15 * np.maximum(1.0, t1))
            if not hit.any():
                break
            rows = active[hit]
            frac = np.clip((tgt[hit] - t0[hit]) / d[hit], 0.0, 1.0)
            out[rows, ptr[rows]] = c0[hit] + (c1[hit] - c0[hit]) * frac
            ptr[rows] += 1
        cur[active] = c1
        step[active] += 1
        done = ptr[active] >= n_targets
        if absorb and dead.any():
            newly = dead & ~np.isfinite(death[active])
            death[active[newly]] = t1[newly]
            done |= dead  # remaining targets stay 0 in `out`
        active = active[~done]
    return out, death


def simulate_via_time_change(
    params: ModelParams,
    z0: float,
    horizon: float,
    dt: float,
    n: int,
    seed: int,
    record_dt: float | None = None,
) -> TrajectorySet:
    """Alternative construction: Z_t = F_{tau(t)} e^{S_t} with F a Feller path
    (drift theta/sigma_b^2, unit branching rate) run on the random clock
    tau(t) = int_0^t sigma_b^2 e^{-S} ds.  F and S use independent streams.
    """
    if z0 < 0.0:
        raise ValueError("z0 must be nonnegative")
    if dt >= horizon:
        raise ValueError("dt must be smaller than horizon")
    every, n_rec = _record_grid(horizon, dt, record_dt)
    m = int(round(horizon / dt))
    drift_f = params.theta / params.sigma_b2
    absorb = params.theta == 0.0

    def block_fn(bidx, start, count):
        rng_s = stream(seed, 0x7C, bidx, 0)
        rng_f = stream(seed, 0x7C, bidx, 1)
        incr = params.alpha * dt + math.sqrt(params.sigma_e2 * dt) * rng_s.standard_normal(
            (count, m)
        )
        s_path = np.concatenate([np.zeros((count, 1)), np.cumsum(incr, axis=1)], axis=1)
        integrand = params.sigma_b2 * np.exp(-s_path)
        tau = np.concatenate(
            [np.zeros((count, 1)), np.cumsum(0.5 * (integrand[:, :-1] + integrand[:, 1:]) * dt, axis=1)],
            axis=1,
        )
        rec_idx = np.arange(0, n_rec + 1) * every
        f_rec, death_f = feller_at_times(rng_f, z0, tau[:, rec_idx], dt, drift_f, absorb)
        s_rec = s_path[:, rec_idx]
        z_rec = f_rec * np.exp(s_rec)
        absorbed = np.full(count, np.nan)
        if absorb:
            for i in np.nonzero(np.isfinite(death_f))[0]:
                j = int(np.searchsorted(tau[i], death_f[i]))
                if j <= m:
                    absorbed[i] = j * dt
                    z_rec[i, int(np.ceil(j / every)) :] = 0.0
        return z_rec, s_rec, absorbed

    parts = _run_blocks(n, block_fn)
    return TrajectorySet(
        dt=every * dt,
        horizon=m * dt,
        z=np.vstack([p[0] for p in parts]),
        s=np.vstack([p[1] for p in parts]),
        absorbed_at=np.concatenate([p[2] for p in parts]),
        seed_record=SeedRecord(seed, (0x7C,)),
    )


# ---------------------------------------------------------------------------
# survival estimation
# ---------------------------------------------------------------------------


def mc_survival(
    params: ModelParams,
    z0: float,
    t: float,
    n: int,
    seed: int,
    dt: float | None = None,
) -> McEstimate:
    """Fraction of unabsorbed paths at t, with binomial standard error.

    Lean kernel: no path storage, absorbed replicas drop out of the
    computation.  theta must be 0 for comparisons against survival_exact.
    """
    if n < 100:
        warnings.warn("mc_survival with n < 100 has a uselessly large standard error")
    if z0 < 0.0:
        raise ValueError("z0 must be nonnegative")
    if params.theta != 0.0:
        raise ValueError("mc_survival requires theta = 0 (0 is not absorbing otherwise)")
    dt = default_dt(params) if dt is None else dt
    m = int(round(t / dt))
    if m < 1:
        raise ValueError("dt must not exceed t")
    if z0 == 0.0:
        return McEstimate(mean=0.0, std_error=0.0, n=n)
    alpha, se2, sb2, theta = params.alpha, params.sigma_e2, params.sigma_b2, params.theta
    sdt_e, sdt_b = math.sqrt(se2 * dt), math.sqrt(sb2 * dt)

    def block_fn(bidx, start, count):
        rng = stream(seed, 0x5E, bidx)
        z = np.full(count, float(z0))
        alive = count
        for k in range(m):
            if alive == 0:
                break
            ne = rng.standard_normal(alive)
            nb = rng.standard_normal(alive)
            zc = z[:alive]
            zc = zc + theta * dt + (0.5 * se2 * dt + alpha * dt + sdt_e * ne) * zc + sdt_b * np.sqrt(zc) * nb
            keep = zc > 0.0
            alive = int(np.count_nonzero(keep))
            z[:alive] = zc[keep]
        return alive

    survivors = sum(_run_blocks(n, block_fn))
    p = survivors / n
    return McEstimate(mean=p, std_error=math.sqrt(p * (1.0 - p) / n), n=n)


# ---------------------------------------------------------------------------
# conditioned process and the reweighted semigroup
# ---------------------------------------------------------------------------


def simulate_conditioned(
    params: ModelParams,
    z0: float,
    horizon: float,
    dt: float,
    n: int,
    seed: int,
    ev: ThetaEvaluator,
    record_dt: float | None = None,
) -> TrajectorySet:
    """Euler scheme for the process conditioned to never go extinct.

    Extra drifts relative to the unconditioned system: sigma_b^2 r(Z) on Z
    and sigma_e^2 r(Z) on S, where r(z) = z vartheta'(z)/vartheta(z).  At
    and below the intermediate boundary r is identically 1 and the scheme
    reduces exactly to the linear conditioned system (immigration sigma_b^2,
    environment drift alpha + sigma_e^2).
    """
    if z0 <= 0.0:
        raise ValueError("conditioning requires z0 > 0 (vartheta(0) = 0)")
    if dt >= horizon:
        raise ValueError("dt must be smaller than horizon")
    if ev.params != params:
        raise ValueError("ThetaEvaluator parameters differ from simulation parameters")
    every, n_rec = _record_grid(horizon, dt, record_dt)
    m = int(round(horizon / dt))
    alpha, se2, sb2 = params.alpha, params.sigma_e2, params.sigma_b2
    sdt_e, sdt_b = math.sqrt(se2 * dt), math.sqrt(sb2 * dt)
    exact_linear = ev.regime in (
        Regime.INTERMEDIATELY_SUBCRITICAL,
        Regime.STRONGLY_SUBCRITICAL,
    )
    ratio = None if exact_linear else ev.ratio_interpolant()

    def block_fn(bidx, start, count):
        rng = stream(seed, 0xC0, bidx)
        z = np.full(count, float(z0))
        s = np.zeros(count)
        z_rec = np.empty((count, n_rec + 1))
        s_rec = np.empty((count, n_rec + 1))
        z_rec[:, 0] = z
        s_rec[:, 0] = s
        k_rec = 1
        for k in range(m):
            ne = rng.standard_normal(count)
            nb = rng.standard_normal(count)
            r = 1.0 if exact_linear else ratio(np.maximum(z, Z_FLOOR))
            ds = (alpha + se2 * r) * dt + sdt_e * ne
            z = z + sb2 * r * dt + 0.5 * se2 * z * dt + z * ds + sdt_b * np.sqrt(z) * nb
            # 0 is an entrance boundary for the conditioned process
            np.maximum(z, Z_FLOOR, out=z)
            s += ds
            if (k + 1) % every == 0:
                z_rec[:, k_rec] = z
                s_rec[:, k_rec] = s
                k_rec += 1
        return z_rec, s_rec

    parts = _run_blocks(n, block_fn)
    return TrajectorySet(
        dt=every * dt,
        horizon=m * dt,
        z=np.vstack([p[0] for p in parts]),
        s=np.vstack([p[1] for p in parts]),
        absorbed_at=np.full(n, np.nan),
        seed_record=SeedRecord(seed, (0xC0,)),
    )


def _final_state(params: ModelParams, z0, t, dt, n, seed, tag):
    """Z_t and S_t of the unconditioned system (lean, full paths not kept)."""
    m = int(round(t / dt))
    alpha, se2, sb2, theta = params.alpha, params.sigma_e2, params.sigma_b2, params.theta
    sdt_e, sdt_b = math.sqrt(se2 * dt), math.sqrt(sb2 * dt)

    def block_fn(bidx, start, count):
        rng = stream(seed, tag, bidx)
        z = np.full(count, float(z0))
        s = np.zeros(count)
        for k in range(m):
            ne = rng.standard_normal(count)
            nb = rng.standard_normal(count)
            zp = np.maximum(z, 0.0)
            ds = alpha * dt + sdt_e * ne
            z = z + theta * dt + 0.5 * se2 * zp * dt + zp * ds + sdt_b * np.sqrt(zp) * nb
            if theta == 0.0:
                z[z <= 0.0] = 0.0
            else:
                np.maximum(z, 0.0, out=z)
            s += ds
        return z, s

    parts = _run_blocks(n, block_fn)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def reweighted_expectation(
    params: ModelParams,
    z0: float,
    t: float,
    bins: np.ndarray,
    n: int,
    seed: int,
    ev: ThetaEvaluator,
    dt: float | None = None,
) -> list[McEstimate]:
    """Estimates of P(conditioned Z_t in bin) by reweighting the unconditioned
    process: each path carries the weight e^{lam t} vartheta(Z_t)/vartheta(z0).

    Absorbed paths weigh zero, so conditioning needs no rejection step.
    """
    if z0 <= 0.0:
        raise ValueError("reweighting requires z0 > 0")
    dt = default_dt(params) if dt is None else dt
    z, _ = _final_state(params, z0, t, dt, n, seed, tag=0x3E)
    w = math.exp(ev.profile.lam * t) / ev.vartheta(z0) * ev.vartheta(z)
    bins = np.asarray(bins, dtype=float)
    out = []
    for lo, hi in zip(bins[:-1], bins[1:]):
        wk = w * ((z >= lo) & (z < hi))
        out.append(
            McEstimate(mean=float(wk.mean()), std_error=float(wk.std(ddof=1) / math.sqrt(n)), n=n)
        )
    return out


# ---------------------------------------------------------------------------
# scale function, boundary classification, stationary law
# ---------------------------------------------------------------------------


def _conditioned_coeffs(params: ModelParams, ev: ThetaEvaluator, y: np.ndarray):
    """Drift and squared diffusion of the conditioned one-dimensional Z system."""
    r = ev.ratio(y)
    mu = r * (params.sigma_b2 + params.sigma_e2 * y) + (params.alpha + 0.5 * params.sigma_e2) * y
    sig2 = params.sigma_b2 * y + params.sigma_e2 * y * y
    return mu, sig2


def scale_function(
    params: ModelParams, z: float, ev: ThetaEvaluator, n_grid: int = 6000
) -> float:
    """R(z) = int_1^z exp(-int_1^y 2 mu/sigma^2 dx) dy for the conditioned system.

    Nested log-grid quadrature; R(1) = 0 by construction.
    """
    if z <= 0.0:
        raise ValueError("z must be positive")
    if z == 1.0:
        return 0.0
    lo, hi = (z, 1.0) if z < 1.0 else (1.0, z)
    x = np.geomspace(lo, hi, n_grid)
    mu, sig2 = _conditioned_coeffs(params, ev, x)
    g = 2.0 * mu / sig2
    # cumulative int from 1: integrate from lo and shift so the value at 1 is 0
    inner = np.concatenate([[0.0], np.cumsum(0.5 * (g[1:] + g[:-1]) * np.diff(x))])
    anchor = inner[-1] if z < 1.0 else 0.0
    expo = np.exp(-(inner - anchor))
    if not np.all(np.isfinite(expo)):
        raise AccuracyError("scale-function integrand overflowed; reduce the z range")
    outer = float(np.sum(0.5 * (expo[1:] + expo[:-1]) * np.diff(x)))
    return outer if z > 1.0 else -outer


@dataclass(frozen=True)
class BoundaryClassification:
    R0_is_minus_inf: bool
    Rinf_finite: bool


def boundary_classification(params: ModelParams, ev: ThetaEvaluator) -> BoundaryClassification:
    """Probe R near both boundaries: divergence at 0 and saturation at infinity."""
    r_small = scale_function(params, 1e-6, ev)
    r_big, r_mid = scale_function(params, 1e6, ev), scale_function(params, 1e3, ev)
    return BoundaryClassification(
        R0_is_minus_inf=r_small < -1e3,
        Rinf_finite=(r_big - r_mid) < 1e-2 * max(1.0, abs(r_mid)),
    )


def _stationary_norm(params: ModelParams) -> float:
    a, sb2, se2 = params.alpha, params.sigma_b2, params.sigma_e2
    val, _ = integrate.quad(
        lambda y: y * (sb2 + se2 * y) ** (2.0 * a / se2), 0.0, np.inf, limit=400
    )
    return 1.0 / val


def stationary_density(params: ModelParams, y) -> np.ndarray | float:
    """Long-run density of the conditioned process, c y (sb2 + se2 y)^{2 alpha/se2}.

    Exists for alpha < -sigma_e^2 strictly; c is fixed by normalization.
    """
    if not params.alpha < -params.sigma_e2:
        raise ValueError("stationary law requires alpha < -sigma_e^2")
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr < 0.0):
        raise ValueError("y must be nonnegative")
    c = _stationary_norm(params)
    out = c * y_arr * (params.sigma_b2 + params.sigma_e2 * y_arr) ** (2.0 * params.alpha / params.sigma_e2)
    return float(out) if out.ndim == 0 else out


def stationary_cdf(params: ModelParams, grid_hi: float = 1e4, n: int = 20000):
    """Callable CDF of the stationary law (for goodness-of-fit tests)."""
    y = np.concatenate([[0.0], np.geomspace(1e-8, grid_hi, n)])
    pdf = stationary_density(params, y)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(y))])
    cdf = np.minimum(cdf, 1.0)

    def fn(x):
        return np.interp(np.asarray(x, dtype=float), y, cdf, left=0.0, right=1.0)

    return fn
