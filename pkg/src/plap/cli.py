"""Command line front end: ``plap {run,sweep,dual-check,galerkin,gamma} <config>``.

Each experiment expands into independent jobs.  Jobs own one subdirectory
of the output directory each and run in a process pool capped by the
``PLAP_THREADS`` environment variable.  The parent writes the effective
config echo and the summary after all jobs returned, in job order, so the
artifact set depends only on (config, seed).

Exit status: 0 when every job succeeded, 1 when at least one failed
(partial outputs plus an ``ERROR`` marker are kept), 2 for usage or
configuration errors.
"""
from __future__ import annotations

import argparse
import itertools
import logging
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import diagnostics as dg
from . import dual as du
from . import galerkin as gk
from .config import ConfigError, ExperimentConfig, parse_config
from .fields import SimParams, Trajectory, l1_norm, l2_norm, make_initial, spacetime_l2_distance
from .output import format_table, write_error, write_table, write_trajectory
from .stepper import SchemeConfig, StepError, run

log = logging.getLogger("plap")

SUBCOMMAND_KINDS = {
    "run": ("run",),
    "sweep": ("run", "ladder", "extinction_sweep"),
    "dual-check": ("dual_check",),
    "galerkin": ("galerkin_compare",),
    "gamma": ("gamma",),
}


@dataclass
class Job:
    label: str
    kind: str
    cfg: ExperimentConfig
    params: SimParams
    out: Path
    extra: dict = field(default_factory=dict)


@dataclass
class JobResult:
    label: str
    ok: bool
    message: str = ""
    values: dict = field(default_factory=dict)
    trajectory: Trajectory | None = None


# -------------------------------------------------------------- job bodies


def _initial(job: Job):
    return make_initial(job.cfg.initial_spec(), job.params.grid)


def _gamma_seeds(cfg: ExperimentConfig) -> tuple[int, ...]:
    seeds = cfg.gamma.get("seeds")
    return tuple(seeds) if seeds else (cfg.seed, cfg.seed + 1, cfg.seed + 2)


def _run_trajectory(job: Job, scheme: SchemeConfig) -> Trajectory:
    """Run and write outputs; partial outputs survive a failing step."""
    try:
        traj = run(_initial(job), job.params, scheme)
    except StepError as exc:
        if exc.trajectory is not None:
            write_trajectory(exc.trajectory, job.out)
        raise
    write_trajectory(traj, job.out)
    return traj


def _job_run(job: Job) -> JobResult:
    traj = _run_trajectory(job, job.cfg.scheme)
    res = np.array([r.energy_residual for r in traj.diagnostics[1:]]) if len(traj) > 1 else np.zeros(1)
    return JobResult(job.label, True, values={
        "final_time": traj.times[-1],
        "final_l2": l2_norm(traj.final),
        "max_energy_residual": float(res.max()),
        "max_overshoot": float(max(r.overshoot for r in traj.diagnostics)),
        "extinction_time": traj.extinction_time,
        "status": traj.status,
    })


def _job_ladder(job: Job) -> JobResult:
    scheme = SchemeConfig(**{**job.cfg.scheme.__dict__, "stop_at_extinction": False})
    traj = _run_trajectory(job, scheme)
    return JobResult(job.label, True, values={"nu": job.params.nu, "mu": job.params.mu}, trajectory=traj)


def _job_extinction(job: Job) -> JobResult:
    params = job.params
    gam = dg.gamma_estimate(params.grid, params.p, _gamma_seeds(job.cfg), job.cfg.gamma.get("maxiter", 5000))
    scheme = SchemeConfig(**{**job.cfg.scheme.__dict__, "stop_at_extinction": True})
    traj = _run_trajectory(job, scheme)
    rep = dg.extinction_report(traj, gam.value)
    env = dg.ode_envelope_check(traj, params.p, params.delta, gam.value)
    return JobResult(job.label, True, values={
        "delta": params.delta, "p": params.p, "n_cells": params.n_cells,
        "hypothesis_lhs": rep.hypothesis_lhs, "gamma_h": gam.value,
        "t_star_bound": rep.t_star_bound, "measured": rep.measured_extinction,
        "monotone_from": rep.monotone_from, "reason": rep.reason,
        "envelope_violation": env.relative_violation,
    })


def _job_dual(job: Job) -> JobResult:
    cfg, params = job.cfg, job.params
    opts = cfg.dual
    horizon = opts.get("horizon", params.t_end)
    fparams = params.replace(t_end=max(params.t_end, horizon))
    job = Job(job.label, job.kind, cfg, fparams, job.out)
    scheme = SchemeConfig(**{**cfg.scheme.__dict__, "stop_at_extinction": False, "snapshot_stride": 1})
    traj = _run_trajectory(job, scheme)
    grid = fparams.grid
    center = opts.get("center", [0.5])
    phi0 = du.smooth_bump(grid, center if len(center) > 1 else center[0], opts.get("radius", 0.25),
                          opts.get("component", 0))
    nu_dual = opts.get("nu_dual")
    form = opts.get("drift_form", "advective")
    rows = []
    for cells in opts.get("eta_cells", [8.0, 4.0, 2.0]):
        eta = cells * grid.h
        r = du.duality_residual(traj, horizon, phi0, eta, nu_dual=nu_dual, drift_form=form)
        rows.append([cells, eta, r])
    exact = du.duality_residual(traj, horizon, phi0, None, nu_dual=nu_dual, mollify=False, drift_form=form)
    coeffs = du.build_dual_coefficients(traj, horizon, rows[-1][1] if rows else None, params.mu, params.p,
                                        mollify=bool(opts.get("mollify", True)) and bool(rows))
    dual = du.dual_run(phi0, coeffs, params.nu if nu_dual is None else nu_dual, drift_form=form)
    write_table(job.out / "dual_l1.csv", ["s", "l1"], [[s, l1_norm(x)] for s, x in zip(dual.times, dual.states)])
    l1 = du.l1_stability(dual)
    linf = du.linf_bound_check(traj)
    write_table(job.out / "duality.csv", ["eta_cells", "eta", "residual"], rows)
    return JobResult(job.label, True, values={
        "rows": rows, "unmollified": exact, "l1_ratio": l1.ratio,
        "linf_overshoot": linf.max_overshoot, "linf_relative": linf.relative,
    })


def _job_galerkin(job: Job) -> JobResult:
    cfg, params = job.cfg, job.params
    opts = cfg.galerkin
    scheme = SchemeConfig(**{**cfg.scheme.__dict__, "stop_at_extinction": False})
    traj = _run_trajectory(job, scheme)
    basis = gk.build_basis(params.dim, opts.get("modes", 32), opts.get("quad_points"))
    c0 = gk.project(traj.initial, basis)
    gal = gk.integrate(c0, params, opts.get("dt", 1e-4), params.t_end, basis, opts.get("stride", 100))
    write_table(job.out / "galerkin.csv", ["time", "l2", "energy_residual"],
                [[s.time, s.l2_norm, r] for s, r in zip(gal.states, gal.energy_residual)])
    v = gk.reconstruct(gal.final, params.grid)
    dist = l2_norm(v - traj.final)
    u0 = l2_norm(traj.initial)
    return JobResult(job.label, True, values={
        "l2_distance": dist, "relative": dist / u0 if u0 else 0.0,
        "max_energy_residual": float(max(gal.energy_residual)),
        "modes": basis.modes_per_axis,
    })


def _job_gamma(job: Job) -> JobResult:
    p = job.params
    res = dg.gamma_estimate(p.grid, p.p, _gamma_seeds(job.cfg), job.cfg.gamma.get("maxiter", 5000))
    job.out.mkdir(parents=True, exist_ok=True)
    np.save(job.out / "minimizer.npy", res.minimizer)
    return JobResult(job.label, True, values={
        "p": p.p, "dim": p.dim, "n_cells": p.n_cells, "gamma_h": res.value,
        "per_seed": res.per_seed, "stagnated": res.stagnated,
    })


JOB_BODIES: dict[str, Callable[[Job], JobResult]] = {
    "run": _job_run,
    "ladder": _job_ladder,
    "extinction_sweep": _job_extinction,
    "dual_check": _job_dual,
    "galerkin_compare": _job_galerkin,
    "gamma": _job_gamma,
}


def execute(job: Job) -> JobResult:
    """Run one job, converting any exception into a failed result."""
    try:
        return JOB_BODIES[job.kind](job)
    except Exception as exc:  # noqa: BLE001 - every failure becomes an error marker
        msg = f"{type(exc).__name__}: {exc}"
        log.error("job %s failed: %s", job.label, msg)
        log.debug("%s", traceback.format_exc())
        return JobResult(job.label, False, msg)


# ------------------------------------------------------------ job planning


def plan_jobs(cfg: ExperimentConfig) -> list[Job]:
    root = Path(cfg.output_dir)
    base = cfg.params
    if cfg.kind == "ladder":
        jobs = []
        nus = cfg.sweep.get("nu", [base.nu])
        for i, nu in enumerate(nus):
            jobs.append(Job(f"nu_{i}", "ladder", cfg, base.replace(nu=nu), root / "runs" / f"nu_{i}"))
        for i, mu in enumerate(cfg.sweep.get("mu", [])):
            jobs.append(Job(f"mu_{i}", "ladder", cfg, base.replace(nu=nus[-1], mu=mu), root / "runs" / f"mu_{i}"))
        return jobs
    axes = sorted(cfg.sweep)
    if not axes:
        return [Job("run", cfg.kind, cfg, base, root / "runs" / "run")]
    jobs = []
    for i, combo in enumerate(itertools.product(*(cfg.sweep[a] for a in axes))):
        label = f"job_{i:03d}"
        jobs.append(Job(label, cfg.kind, cfg, base.replace(**dict(zip(axes, combo))), root / "runs" / label))
    return jobs


def thread_cap() -> int:
    raw = os.environ.get("PLAP_THREADS")
    if raw is None or raw == "":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"PLAP_THREADS = {raw!r} is not an integer") from None
    if n < 1:
        raise ConfigError(f"PLAP_THREADS = {n} must be >= 1")
    return n


def run_jobs(jobs: list[Job], threads: int) -> list[JobResult]:
    if threads <= 1 or len(jobs) <= 1:
        return [execute(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
        return list(pool.map(execute, jobs))


# ---------------------------------------------------------------- summary


def _summarize(cfg: ExperimentConfig, jobs: list[Job], results: list[JobResult]) -> str:
    parts = [f"experiment: {cfg.kind}\nseed: {cfg.seed}\njobs: {len(jobs)}\n"]
    status = [[r.label, "ok" if r.ok else "FAILED", r.message or "-"] for r in results]
    parts.append(format_table("job status", ["job", "status", "message"], status))
    good = [(j, r) for j, r in zip(jobs, results) if r.ok]
    root = Path(cfg.output_dir)
    if cfg.kind == "run":
        rows = [[r.label, r.values["final_time"], r.values["final_l2"], r.values["max_energy_residual"],
                 r.values["max_overshoot"], r.values["extinction_time"]] for _, r in good]
        parts.append(format_table("residual table",
                                  ["job", "final_time", "final_l2", "max_energy_residual", "max_overshoot",
                                   "extinction_time"], rows))
        if cfg.sweep:
            axes = sorted(cfg.sweep)
            write_table(root / "sweep.csv", ["job"] + axes, [[j.label] + [getattr(j.params, a) for a in axes]
                                                              for j in jobs])
    elif cfg.kind == "ladder":
        parts.append(_ladder_summary(jobs, results, root))
    elif cfg.kind == "extinction_sweep":
        cols = ["delta", "hypothesis_lhs", "gamma_h", "t_star_bound", "measured"]
        rows = [[r.values[c] for c in cols] for _, r in good]
        write_table(root / "extinction.csv", cols, rows)
        table = [[r.label, r.values["p"], r.values["delta"], r.values["hypothesis_lhs"], r.values["gamma_h"],
                  r.values["t_star_bound"], r.values["measured"], r.values["monotone_from"],
                  r.values["envelope_violation"], r.values["reason"] or "-"] for _, r in good]
        parts.append(format_table("extinction report",
                                  ["job", "p", "delta", "hypothesis_lhs", "gamma_h", "t_star_bound", "measured",
                                   "monotone_from", "envelope_violation", "reason"], table))
    elif cfg.kind == "dual_check":
        for _, r in good:
            v = r.values
            parts.append(format_table("duality residual table", ["eta_cells", "eta", "residual"], v["rows"]))
            parts.append(format_table("dual checks", ["quantity", "value"], [
                ["unmollified_residual", v["unmollified"]],
                ["l1_ratio", v["l1_ratio"]],
                ["linf_overshoot", v["linf_overshoot"]],
                ["linf_relative", v["linf_relative"]],
            ]))
    elif cfg.kind == "galerkin_compare":
        rows = [[r.label, r.values["modes"], r.values["l2_distance"], r.values["relative"],
                 r.values["max_energy_residual"]] for _, r in good]
        parts.append(format_table("galerkin comparison",
                                  ["job", "modes", "l2_distance", "relative", "max_energy_residual"], rows))
    elif cfg.kind == "gamma":
        rows = [[r.values["p"], r.values["dim"], r.values["n_cells"], r.values["gamma_h"],
                 "yes" if r.values["stagnated"] else "no"] for _, r in good]
        write_table(root / "gamma.csv", ["p", "dim", "n_cells", "gamma_h", "stagnated"],
                    [row[:4] + [row[4]] for row in rows])
        parts.append(format_table("sobolev constant", ["p", "dim", "n_cells", "gamma_h", "stagnated"], rows))
    return "\n".join(parts)


def ladder_distances(trajs: list[Trajectory]) -> list[float]:
    return [spacetime_l2_distance(a, b) for a, b in zip(trajs, trajs[1:])]


def _ladder_summary(jobs: list[Job], results: list[JobResult], root: Path) -> str:
    rows, text = [], []
    for prefix, axis in (("nu_", "nu"), ("mu_", "mu")):
        picked = [(j, r) for j, r in zip(jobs, results) if j.label.startswith(prefix)]
        if len(picked) < 2 or not all(r.ok for _, r in picked):
            continue
        d = ladder_distances([r.trajectory for _, r in picked])
        for (ja, _), (jb, _), dist in zip(picked, picked[1:], d):
            rows.append([axis, getattr(ja.params, axis), getattr(jb.params, axis), dist])
        dec = all(b < a for a, b in zip(d, d[1:]))
        text.append(f"{axis} ladder distances strictly decreasing: {'yes' if dec else 'no'}")
    write_table(root / "ladder.csv", ["axis", "from", "to", "distance"], rows)
    table = format_table("pairwise L2(Omega_T) distances", ["axis", "from", "to", "distance"], rows)
    return table + "\n".join(text) + ("\n" if text else "")


# ------------------------------------------------------------------- main


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> int:
    """Execute ``cfg`` and write all artifacts; returns the exit status."""
    root = Path(cfg.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    marker = root / "ERROR"
    if marker.exists():
        marker.unlink()
    (root / "effective.cfg").write_text(cfg.echo())
    jobs = plan_jobs(cfg)
    results = run_jobs(jobs, threads)
    (root / "summary.txt").write_text(_summarize(cfg, jobs, results))
    failed = [r for r in results if not r.ok]
    if failed:
        write_error(root, [f"{r.label}: {r.message}" for r in failed])
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="plap", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMAND_KINDS:
        sp = sub.add_parser(name)
        sp.add_argument("config", type=Path)
        sp.add_argument("-o", "--output-dir", help="override [experiment] output_dir")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        text = args.config.read_text(encoding="utf-8")
    except OSError as exc:
        print(f"plap: cannot read {args.config}: {exc}", file=sys.stderr)
        return 2
    try:
        cfg = parse_config(text)
        threads = thread_cap()
    except ConfigError as exc:
        print(f"plap: {args.config}: {exc}", file=sys.stderr)
        return 2
    if args.output_dir:
        cfg.output_dir = args.output_dir
    allowed = SUBCOMMAND_KINDS[args.command]
    if cfg.kind not in allowed:
        print(f"plap: subcommand {args.command!r} cannot run experiment kind {cfg.kind!r}", file=sys.stderr)
        return 2
    if args.command == "run" and cfg.sweep:
        print("plap: config has [sweep] axes; use the 'sweep' subcommand", file=sys.stderr)
        return 2
    if args.command == "sweep" and cfg.kind == "run" and not cfg.sweep:
        print("plap: 'sweep' needs a [sweep] section", file=sys.stderr)
        return 2
    try:
        return run_experiment(cfg, threads)
    except OSError as exc:
        print(f"plap: cannot write outputs: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
