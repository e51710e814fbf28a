"""Time integration of the regularized p-Laplacian system with convection.

The default scheme is linearly implicit backward Euler: the diffusion
coefficient is frozen at the old level, the convection term is explicit,
and each step solves one symmetric positive definite system shared by all
components.  Setting ``nu`` and then ``mu`` to zero walks from the viscous
regularization down to the limit problem.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from . import operators as ops
from .diagnostics import make_record, step_energy_residual
from .fields import SimParams, Trajectory, VectorField, l2_norm

log = logging.getLogger(__name__)

EXTINCTION_RTOL = 1e-10


class StepError(RuntimeError):
    """A time step could not be completed.

    ``trajectory`` holds the partial run when raised from :func:`run`.
    """

    def __init__(self, message: str, trajectory: Trajectory | None = None):
        super().__init__(message)
        self.trajectory = trajectory


class CFLError(StepError):
    pass


@dataclass(frozen=True)
class SchemeConfig:
    mode: str = "semi_implicit"
    linear_solver_tol: float = 1e-10
    max_linear_iters: int = 20000
    cfl_safety: float = 0.9
    snapshot_stride: int = 1
    stop_at_extinction: bool = True

    def __post_init__(self):
        if self.mode not in ("semi_implicit", "explicit"):
            raise ValueError(f"unknown scheme mode {self.mode!r}")
        if not self.linear_solver_tol > 0:
            raise ValueError("linear_solver_tol must be > 0")
        if not 0 < self.cfl_safety < 1:
            raise ValueError("cfl_safety must lie in (0, 1)")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be >= 1")
        if self.max_linear_iters < 1:
            raise ValueError("max_linear_iters must be >= 1")


def transport_velocity(v: VectorField, params: SimParams) -> VectorField:
    """``J_mu(v)``: the mollified field that advects ``v``."""
    return ops.mollify_space(v, ops.mollifier_radius(params.mu, v.grid.h))


def convective_term(v: VectorField, params: SimParams) -> np.ndarray:
    """``delta * (J_mu(v) . grad) v`` as a nodal array."""
    if params.delta == 0:
        return np.zeros_like(v.values)
    return params.delta * ops.convection(transport_velocity(v, params), v).values


def solve_spd(A: sp.spmatrix, rhs: np.ndarray, tol: float, maxiter: int) -> np.ndarray:
    """Jacobi-preconditioned CG on every row of ``rhs``.

    The tolerance is relative to ``||rhs||``; the previous value is the
    initial guess.
    """
    diag = A.diagonal()
    M = sp.diags(1.0 / diag)
    out = np.empty_like(rhs)
    for i, b in enumerate(rhs):
        if not np.any(b):
            out[i] = 0.0
            continue
        x, info = cg(A, b, x0=b.copy(), rtol=tol, atol=0.0, maxiter=maxiter, M=M)
        if info != 0:
            res = np.linalg.norm(A @ x - b) / np.linalg.norm(b)
            raise StepError(f"CG did not converge in {maxiter} iterations (residual {res:.3e})")
        out[i] = x
    return out


def implicit_matrix(v_n: VectorField, params: SimParams, dt: float) -> tuple[sp.csr_matrix, int]:
    """``I + dt * (nu K_1 + K_a(v_n))`` and the number of clamped coefficient nodes."""
    grid = v_n.grid
    coef = ops.coefficient_of(v_n, params.mu, params.p)
    K = ops.stiffness_matrix(grid, coef.values)
    if params.nu:
        K = K + params.nu * ops.stiffness_matrix(grid, None)
    A = sp.identity(K.shape[0], format="csr") + dt * K
    return sp.csr_matrix(A), coef.clamped


def step_semi_implicit(
    v_n: VectorField, params: SimParams, cfg: SchemeConfig = SchemeConfig(), dt: float | None = None
) -> VectorField:
    """One lagged-coefficient backward Euler step."""
    dt = params.dt if dt is None else dt
    if not v_n.is_finite():
        raise StepError("non-finite values in the current state")
    rhs = v_n.values - dt * convective_term(v_n, params)
    A, _ = implicit_matrix(v_n, params, dt)
    flat = rhs.reshape(v_n.grid.dim, -1)
    sol = solve_spd(A, flat, cfg.linear_solver_tol, cfg.max_linear_iters)
    out = sol.reshape(v_n.values.shape)
    if not np.all(np.isfinite(out)):
        raise StepError("non-finite values after the implicit solve")
    t = None if v_n.time is None else v_n.time + dt
    return VectorField(v_n.grid, out, t)


def cfl_dt(v: VectorField, params: SimParams) -> float:
    """Largest stable forward Euler step (parabolic plus advective limit)."""
    g = v.grid
    a_max = float(ops.coefficient_of(v, params.mu, params.p).values.max())
    w_max = 0.0
    if params.delta:
        w_max = abs(params.delta) * float(transport_velocity(v, params).magnitude.max())
    return g.h**2 / (2 * g.dim * (params.nu + a_max) + g.h * w_max * g.dim)


def step_explicit(
    v_n: VectorField, params: SimParams, cfg: SchemeConfig = SchemeConfig(), dt: float | None = None
) -> VectorField:
    """One forward Euler step; refuses steps above the CFL limit."""
    dt = params.dt if dt is None else dt
    if not v_n.is_finite():
        raise StepError("non-finite values in the current state")
    limit = cfl_dt(v_n, params) * cfg.cfl_safety
    if dt > limit:
        raise CFLError(f"dt = {dt:.3e} exceeds the CFL limit {limit:.3e}")
    a = ops.coefficient_of(v_n, params.mu, params.p).values
    rate = ops.flux_divergence(v_n, a) - convective_term(v_n, params)
    if params.nu:
        rate = rate + params.nu * ops.laplacian(v_n).values
    t = None if v_n.time is None else v_n.time + dt
    return VectorField(v_n.grid, v_n.values + dt * rate, t)


def _time_levels(t_end: float, dt: float) -> np.ndarray:
    n_steps = max(int(math.ceil(t_end / dt - 1e-9)), 0)
    times = dt * np.arange(n_steps + 1)
    if n_steps:
        times[-1] = t_end
    return times


def run(u0: VectorField, params: SimParams, cfg: SchemeConfig = SchemeConfig()) -> Trajectory:
    """Integrate from ``u0`` to ``params.t_end`` (or to extinction).

    Snapshots are stored every ``cfg.snapshot_stride`` steps plus the last
    one.  On failure a :class:`StepError` carrying the partial trajectory is
    raised.
    """
    if u0.grid != params.grid:
        raise ValueError(f"initial datum grid {u0.grid} differs from params grid {params.grid}")
    if not u0.is_finite():
        raise ValueError("initial datum must be finite")
    stepper = step_semi_implicit if cfg.mode == "semi_implicit" else step_explicit
    u0 = VectorField(u0.grid, u0.values, 0.0)
    traj = Trajectory(params)
    u0_linf = float(u0.magnitude.max())
    threshold = EXTINCTION_RTOL * l2_norm(u0)
    traj.append(0.0, u0, make_record(u0, 0.0, params, u0_linf))
    if l2_norm(u0) <= threshold:
        traj.extinction_time = 0.0
        if cfg.stop_at_extinction:
            traj.status = "extinct"
            return traj

    times = _time_levels(params.t_end, params.dt)
    v = u0
    for k in range(1, len(times)):
        dt = times[k] - times[k - 1]
        try:
            v_new = stepper(v, params, cfg, dt=dt)
        except StepError as exc:
            traj.status = "aborted"
            traj.message = f"step {k} (t = {times[k]:.6g}): {exc}"
            log.error(traj.message)
            raise StepError(traj.message, traj) from exc
        v_new = VectorField(v.grid, v_new.values, float(times[k]))
        resid = step_energy_residual(v, v_new, params, dt)
        extinct = l2_norm(v_new) <= threshold
        last = k == len(times) - 1
        if k % cfg.snapshot_stride == 0 or last or (extinct and cfg.stop_at_extinction):
            rec = make_record(v_new, float(times[k]), params, u0_linf, resid, extinct)
            traj.append(float(times[k]), v_new, rec)
        v = v_new
        if extinct and traj.extinction_time is None:
            traj.extinction_time = float(times[k])
            if cfg.stop_at_extinction:
                traj.status = "extinct"
                break
    return traj
