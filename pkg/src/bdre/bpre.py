"""Discrete branching process in random environment and the empirical
diffusion-approximation diagnostic.

Offspring family: Poisson with log-mean alpha/n + sigma_e G/sqrt(n), G
standard normal, one draw per generation shared by the whole population.
Conditional on the mean m, a generation update collapses to a single
Poisson(Z m) draw, and the conditional variance per individual is m, so
the branching variance parameter is forced to 1.

Note on centering: with log-mean alpha/n the associated random walk has
drift alpha and conditional means match the diffusion exactly
(E[Z_k | env] = z0 exp(walk_k)); the first-moment normalization then
converges to alpha + sigma_e^2/2 rather than alpha.  Centering the mean
itself instead would shift the walk (and the limiting diffusion) down by
sigma_e^2/2 and break the marginal convergence this module exists to
demonstrate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .model import ModelParams
from .rng import stream
from .simulate import default_dt, mc_survival, simulate_bdre

__all__ = ["BpreConfig", "BpreRun", "simulate_bpre", "convergence_diagnostic", "ConvergenceRow"]

_POP_LIMIT = np.iinfo(np.int64).max // 4  # overflow guard on Poisson means


@dataclass(frozen=True)
class BpreConfig:
    """Scaling level n, number of generations, and initial mass z0_mass
    (initial individuals = round(n * z0_mass))."""

    n: int
    generations: int
    z0_mass: float
    alpha: float
    sigma_e2: float

    def __post_init__(self):
        if self.n < 1 or self.generations < 1:
            raise ValueError("n and generations must be >= 1")
        if self.z0_mass < 0.0:
            raise ValueError("z0_mass must be nonnegative")


@dataclass(frozen=True)
class BpreRun:
    """Population path (integer counts) and the associated random walk
    (scaled by sqrt(n) as in the diffusion normalization)."""

    population: np.ndarray  # (replicas, generations + 1), int64
    walk: np.ndarray  # (replicas, generations + 1): sqrt(n) * cumsum(log mean)
    config: BpreConfig


def simulate_bpre(cfg: BpreConfig, seed: int, replicas: int = 1) -> BpreRun:
    """Exact integer recursion: one environment draw per generation, then the
    whole generation reproduces as a single Poisson(Z * m) superposition."""
    rng = stream(seed, 0xB9, 0)
    z0 = int(round(cfg.n * cfg.z0_mass))
    pop = np.empty((replicas, cfg.generations + 1), dtype=np.int64)
    walk = np.zeros((replicas, cfg.generations + 1))
    pop[:, 0] = z0
    sqrt_n = math.sqrt(cfg.n)
    log_means = cfg.alpha / cfg.n + math.sqrt(cfg.sigma_e2) / sqrt_n * rng.standard_normal(
        (replicas, cfg.generations)
    )
    np.cumsum(sqrt_n * log_means, axis=1, out=walk[:, 1:])
    cur = pop[:, 0].astype(np.float64)
    for g in range(cfg.generations):
        lam = cur * np.exp(log_means[:, g])
        if np.any(lam > _POP_LIMIT):
            raise OverflowError("population exceeded the integer guard (2^63-ish individuals)")
        nxt = rng.poisson(lam)
        pop[:, g + 1] = nxt
        cur = nxt.astype(np.float64)
    return BpreRun(population=pop, walk=walk, config=cfg)


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    ks_distance: float
    ks_pvalue: float
    walk_ks_pvalue: float
    survival_bpre: float
    survival_bdre: float
    combined_se: float


def convergence_diagnostic(
    params: ModelParams,
    n_list: list[int],
    t: float,
    replicas: int,
    dt: float | None,
    seed: int,
    z0: float = 1.0,
) -> list[ConvergenceRow]:
    """One-time-marginal comparison of the rescaled discrete process against
    the diffusion: KS distance of Z^{(n)}_{tn}/n vs the simulated diffusion
    marginal, a normality check of the rescaled walk, and the survival gap.

    The Poisson offspring family pins the branching variance at 1, so
    params.sigma_b2 must be 1.
    """
    if params.sigma_b2 != 1.0:
        raise ValueError("the Poisson offspring family forces sigma_b2 = 1; set params.sigma_b2 = 1")
    if params.theta != 0.0:
        raise ValueError("the discrete bridge has no immigration term")
    if sorted(n_list) != list(n_list):
        raise ValueError("n_list must be increasing")
    dt = default_dt(params) if dt is None else dt
    traj = simulate_bdre(params, z0, t, dt, replicas, seed + 101)
    diff_final = traj.final_z()
    surv = mc_survival(params, z0, t, replicas, seed + 202, dt)
    rows = []
    for i, n in enumerate(n_list):
        cfg = BpreConfig(
            n=n, generations=int(round(t * n)), z0_mass=z0,
            alpha=params.alpha, sigma_e2=params.sigma_e2,
        )
        run = simulate_bpre(cfg, seed + i, replicas=replicas)
        scaled = run.population[:, -1] / n
        ks = stats.ks_2samp(scaled, diff_final)
        walk_end = run.walk[:, -1] / math.sqrt(n)
        wks = stats.kstest(
            walk_end,
            stats.norm(loc=params.alpha * t, scale=math.sqrt(params.sigma_e2 * t)).cdf,
        )
        p_bpre = float(np.mean(run.population[:, -1] > 0))
        se = math.sqrt(
            p_bpre * (1 - p_bpre) / replicas + surv.std_error**2
        )
        rows.append(
            ConvergenceRow(
                n=n,
                ks_distance=float(ks.statistic),
                ks_pvalue=float(ks.pvalue),
                walk_ks_pvalue=float(wks.pvalue),
                survival_bpre=p_bpre,
                survival_bdre=surv.mean,
                combined_se=se,
            )
        )
    return rows
