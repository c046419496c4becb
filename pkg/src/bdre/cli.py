"""Batch experiment runner.

Every command requires an explicit --seed (no wall-clock default), writes
its artifact atomically (temp file + rename), and embeds a JSON provenance
header (full config, library version, seed) so outputs are reproducible
and self-describing.  Exit codes: 0 success, 2 config error, 3
numerical-stability error, 4 accuracy-budget exceeded.
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass

import numpy as np

from . import __version__
from .asymptotics import ThetaEvaluator
from .backbone import backbone_simulate, feller_immigration_check
from .bpre import convergence_diagnostic
from .errors import AccuracyError, StabilityError
from .exact import (
    DEFAULT_Q,
    build_density_grid,
    survival_exact,
)
from .model import ModelParams, classify_regime, decay_profile
from .simulate import (
    default_dt,
    mc_survival,
    simulate_bdre,
    simulate_conditioned,
    simulate_via_time_change,
)

__all__ = ["ExperimentConfig", "run", "main"]

COMMANDS = (
    "survival",
    "simulate",
    "condition",
    "backbone",
    "asymptotics",
    "density",
    "bpre-converge",
    "regime-table",
)


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    params: ModelParams
    seed: int
    z0: float = 1.0
    t: float | None = None
    horizon: float | None = None
    dt: float | None = None
    n: int = 10000
    eps: float = 1e-3
    beta: float | None = None
    v: float | None = None
    output_path: str | None = None
    format: str = "csv"
    extra: tuple = ()

    def provenance(self) -> dict:
        cfg = dataclasses.asdict(self)
        cfg["params"] = dataclasses.asdict(self.params)
        cfg["extra"] = list(self.extra)
        return {"config": cfg, "version": __version__, "seed": self.seed}


def _atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".bdre-tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(config: ExperimentConfig, text: str) -> None:
    if config.output_path:
        _atomic_write(config.output_path, text)
    else:
        sys.stdout.write(text)


def _csv(config: ExperimentConfig, header: list[str], rows) -> str:
    buf = io.StringIO()
    buf.write("# " + json.dumps(config.provenance(), sort_keys=True) + "\n")
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(repr(x) if isinstance(x, float) else str(x) for x in row) + "\n")
    return buf.getvalue()


def _json(config: ExperimentConfig, payload: dict) -> str:
    return json.dumps({"provenance": config.provenance(), **payload}, sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# command implementations
# ---------------------------------------------------------------------------


def _cmd_survival(config: ExperimentConfig) -> str:
    t = config.t if config.t is not None else 10.0
    value = survival_exact(config.params, config.z0, t)
    payload = {"survival_exact": value, "z": config.z0, "t": t}
    if config.n > 0:
        est = mc_survival(config.params, config.z0, t, config.n, config.seed, config.dt)
        payload["mc_estimate"] = est.mean
        payload["mc_std_error"] = est.std_error
        payload["mc_n"] = est.n
    return _json(config, payload)


def _paths_csv(config: ExperimentConfig, traj) -> str:
    rows = []
    times = traj.times
    for i in range(traj.n_paths):
        for j, t in enumerate(times):
            rows.append((i, float(t), float(traj.z[i, j]), float(traj.s[i, j])))
    return _csv(config, ["path", "t", "Z", "S"], rows)


def _cmd_simulate(config: ExperimentConfig) -> str:
    horizon = config.horizon if config.horizon is not None else 2.0
    dt = config.dt if config.dt is not None else default_dt(config.params)
    use_tc = "time-change" in config.extra
    sim = simulate_via_time_change if use_tc else simulate_bdre
    if config.format == "json":
        est = mc_survival(config.params, config.z0, horizon, config.n, config.seed, dt) \
            if config.params.theta == 0.0 else None
        traj = sim(config.params, config.z0, horizon, dt, min(config.n, 64), config.seed)
        payload = {
            "n": config.n,
            "horizon": horizon,
            "dt": dt,
            "mean_final_z": float(traj.final_z().mean()),
        }
        if est is not None:
            payload.update(survival=est.mean, std_error=est.std_error)
        return _json(config, payload)
    traj = sim(config.params, config.z0, horizon, dt, config.n, config.seed)
    return _paths_csv(config, traj)


def _cmd_condition(config: ExperimentConfig) -> str:
    horizon = config.horizon if config.horizon is not None else 2.0
    dt = config.dt if config.dt is not None else default_dt(config.params)
    ev = ThetaEvaluator(config.params)
    traj = simulate_conditioned(config.params, config.z0, horizon, dt, config.n, config.seed, ev)
    return _paths_csv(config, traj)


def _cmd_backbone(config: ExperimentConfig) -> str:
    horizon = config.horizon if config.horizon is not None else 1.0
    dt = config.dt if config.dt is not None else default_dt(config.params)
    res = backbone_simulate(
        config.params, config.z0, horizon, dt, config.eps, config.n, config.seed
    )
    fic = feller_immigration_check(
        1.0, config.z0, 1.0, dt, config.eps, min(config.n, 4000), config.seed + 1,
        config.params.sigma_b2,
    )
    payload = {
        "eps": config.eps,
        "family_counts": {
            "initial_mean": float(res.family_counts[:, 0].mean()),
            "immigrant_mean": float(res.family_counts[:, 1].mean()),
        },
        "violation_rate": res.violation_rate(),
        "mean_final_z": float(res.final_z().mean()),
        "feller_immigration_ks": {"statistic": fic.statistic, "pvalue": fic.pvalue},
    }
    return _json(config, payload)


def _cmd_asymptotics(config: ExperimentConfig) -> str:
    ev = ThetaEvaluator(config.params)
    z_grid = np.geomspace(1e-3, 1e3, 61)
    rows = [
        (float(z), float(ev.vartheta(z)), float(ev.vartheta_prime(z)), float(ev.hdrift(z)))
        for z in z_grid
    ]
    return _csv(config, ["z", "vartheta", "vartheta_prime", "hdrift"], rows)


def _cmd_density(config: ExperimentConfig) -> str:
    beta = config.beta if config.beta is not None else 0.0
    v = config.v if config.v is not None else 1.0
    grid = build_density_grid(v, beta, DEFAULT_Q)
    diag = {
        "v": v,
        "beta": beta,
        "points": int(grid.abscissae.size),
        "mass": grid.mass(),
        "tail_mass_bound": grid.tail_mass_bound,
        "estimated_error": abs(grid.mass() - 1.0),
    }
    sys.stderr.write(json.dumps({"diagnostics": diag}, sort_keys=True) + "\n")
    rows = list(zip(map(float, grid.abscissae), map(float, grid.values)))
    return _csv(config, ["a", "p_value"], rows)


def _cmd_bpre_converge(config: ExperimentConfig) -> str:
    t = config.t if config.t is not None else 1.0
    n_list = [int(x) for x in (config.extra or (50, 200, 800))]
    rows = convergence_diagnostic(
        config.params, n_list, t, config.n, config.dt, config.seed, config.z0
    )
    return _csv(
        config,
        ["n", "ks_distance", "survival_bpre", "survival_bdre", "se"],
        [(r.n, r.ks_distance, r.survival_bpre, r.survival_bdre, r.combined_se) for r in rows],
    )


def _cmd_regime_table(config: ExperimentConfig) -> str:
    t = config.t if config.t is not None else 5.0
    rows = []
    for alpha in (0.5, 0.0, -0.5, -1.0, -2.0):
        p = ModelParams(alpha=alpha, sigma_b2=config.params.sigma_b2, sigma_e2=max(config.params.sigma_e2, 1.0))
        regime = classify_regime(p)
        prof = decay_profile(p)
        ev = ThetaEvaluator(p)
        est = mc_survival(p, config.z0, t, config.n, config.seed, config.dt)
        quad = survival_exact(p, config.z0, t)
        rows.append(
            (regime.value, prof.lam, prof.poly_power, float(ev.vartheta(1.0)), est.mean, quad)
        )
    return _csv(
        config,
        ["regime", "lambda", "poly_power", "vartheta_1", "mc_estimate", "quadrature_estimate"],
        rows,
    )


_DISPATCH = {
    "survival": _cmd_survival,
    "simulate": _cmd_simulate,
    "condition": _cmd_condition,
    "backbone": _cmd_backbone,
    "asymptotics": _cmd_asymptotics,
    "density": _cmd_density,
    "bpre-converge": _cmd_bpre_converge,
    "regime-table": _cmd_regime_table,
}


def run(config: ExperimentConfig) -> int:
    """Validate, dispatch, and write the artifact; returns the exit status."""
    try:
        if config.command not in _DISPATCH:
            raise ValueError(f"unknown command {config.command!r}")
        text = _DISPATCH[config.command](config)
        _emit(config, text)
        return 0
    except (ValueError, OverflowError) as exc:
        sys.stderr.write(f"error: config: {exc}\n")
        return 2
    except StabilityError as exc:
        sys.stderr.write(f"error: stability: {exc}\n")
        return 3
    except AccuracyError as exc:
        sys.stderr.write(f"error: accuracy: {exc}\n")
        return 4


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bdre", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--alpha", type=float, default=0.0)
        p.add_argument("--sigma-e2", type=float, default=1.0)
        p.add_argument("--sigma-b2", type=float, default=1.0)
        p.add_argument("--theta", type=float, default=0.0)
        p.add_argument("--z", "--z0", dest="z0", type=float, default=1.0)
        p.add_argument("--t", type=float, default=None)
        p.add_argument("--horizon", type=float, default=None)
        p.add_argument("--dt", type=float, default=None)
        p.add_argument("--n", type=int, default=10000)
        p.add_argument("--eps", type=float, default=1e-3)
        p.add_argument("--beta", type=float, default=None)
        p.add_argument("--v", type=float, default=None)
        p.add_argument("--seed", type=int, required=True)
        p.add_argument("--output-path", type=str, default=None)
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("extra", nargs="*", default=[])
    return ap


def config_from_args(argv: list[str]) -> ExperimentConfig:
    ns = _build_parser().parse_args(argv)
    params = ModelParams(
        alpha=ns.alpha, sigma_b2=ns.sigma_b2, sigma_e2=ns.sigma_e2, theta=ns.theta
    )
    return ExperimentConfig(
        command=ns.command,
        params=params,
        seed=ns.seed,
        z0=ns.z0,
        t=ns.t,
        horizon=ns.horizon,
        dt=ns.dt,
        n=ns.n,
        eps=ns.eps,
        beta=ns.beta,
        v=ns.v,
        output_path=ns.output_path,
        format=ns.format,
        extra=tuple(ns.extra),
    )


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        config = config_from_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
