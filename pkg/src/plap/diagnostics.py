"""Monitors for the a-priori estimates, energy balance and extinction.

Every quantity is evaluated with the same discrete operators the stepper
uses, so identities that hold for the scheme hold here to rounding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

from . import operators as ops
from .fields import Grid, SimParams, Trajectory, VectorField, l2_norm


@dataclass
class DiagnosticsRecord:
    time: float
    l2_norm: float
    linf_norm: float
    grad_l2: float
    grad_lp: float
    weighted_flux: float
    energy_residual: float
    overshoot: float
    B_mu: float
    phi_weight: float
    d2_weighted: float | None = None
    extinction_flag: bool = False

    CSV_COLUMNS = (
        "time", "l2", "linf", "grad_l2", "grad_lp", "weighted_flux",
        "energy_residual", "overshoot", "B_mu", "phi_weight",
    )

    def csv_row(self) -> list[float]:
        return [
            self.time, self.l2_norm, self.linf_norm, self.grad_l2, self.grad_lp,
            self.weighted_flux, self.energy_residual, self.overshoot, self.B_mu,
            self.phi_weight,
        ]


def make_record(
    v: VectorField,
    t: float,
    params: SimParams,
    u0_linf: float,
    energy_residual: float = 0.0,
    extinct: bool = False,
    with_d2: bool = False,
) -> DiagnosticsRecord:
    grid = v.grid
    p, mu = params.p, params.mu
    grad_l2 = ops.grad_l2_norm(v)
    linf = float(v.magnitude.max())
    B_mu = mu * grid.volume + grad_l2**2
    # alpha defaults to 1.1 times its lower bound when not configured
    alpha = params.alpha if params.alpha is not None else 1.1 * params.alpha_min
    d2 = None
    if with_d2 and mu > 0:
        d2 = lemma24_ratio(v, mu, p).lhs
    return DiagnosticsRecord(
        time=t,
        l2_norm=l2_norm(v),
        linf_norm=linf,
        grad_l2=grad_l2,
        grad_lp=ops.grad_lp_norm(v, p),
        weighted_flux=ops.weighted_flux_norm(v, mu, p),
        energy_residual=energy_residual,
        overshoot=max(0.0, linf - u0_linf),
        B_mu=B_mu,
        phi_weight=t**alpha * B_mu ** ((4.0 - p) / 2.0),
        d2_weighted=d2,
        extinction_flag=extinct,
    )


# ------------------------------------------------------------- energy balance


def signed_energy_residual(v0: VectorField, v1: VectorField, params: SimParams, dt: float) -> float:
    """Defect of the energy identity across one step, with its sign.

    ``(|v1|^2 - |v0|^2)/(2 dt) + nu |grad v1|^2 + |a(v1)^(1/2) grad v1|^2
    + delta <J(v0).grad v0, v1>``.
    """
    from .stepper import convective_term

    rate = (l2_norm(v1) ** 2 - l2_norm(v0) ** 2) / (2.0 * dt)
    visc = params.nu * ops.face_energy(v1) if params.nu else 0.0
    flux = ops.weighted_flux_norm(v1, params.mu, params.p) ** 2
    conv = 0.0
    if params.delta:
        conv = float(np.sum(convective_term(v0, params) * v1.values)) * v1.grid.cell_volume
    return rate + visc + flux + conv


def step_energy_residual(v0: VectorField, v1: VectorField, params: SimParams, dt: float) -> float:
    return abs(signed_energy_residual(v0, v1, params, dt))


def energy_residual(traj: Trajectory, n: int) -> float:
    """Energy-identity defect between stored snapshots ``n`` and ``n + 1``."""
    if not 0 <= n < len(traj) - 1:
        raise IndexError(f"step {n} outside trajectory of {len(traj)} samples")
    dt = traj.times[n + 1] - traj.times[n]
    return step_energy_residual(traj.states[n], traj.states[n + 1], traj.params, dt)


# ------------------------------------------------------------ Sobolev constant


@dataclass
class GammaResult:
    value: float
    per_seed: list[float]
    minimizer: np.ndarray
    stagnated: bool = False


def rayleigh_quotient(u: np.ndarray, grid: Grid, p: float) -> float:
    """``||grad u||_p^p / ||u||_2^p`` for a scalar grid function."""
    v = VectorField(grid, _scalar_embed(u, grid))
    return ops.grad_lp_norm(v, p) ** p / l2_norm(v) ** p


def _scalar_embed(u: np.ndarray, grid: Grid) -> np.ndarray:
    vals = np.zeros((grid.dim,) + grid.shape)
    vals[0] = u.reshape(grid.shape)
    return vals


def gamma_estimate(grid: Grid, p: float, seeds: Sequence[int] = (0, 1, 2), maxiter: int = 5000) -> GammaResult:
    """Smallest discrete Rayleigh quotient ``||grad u||_p^p / ||u||_2^p`` found.

    Each seed starts L-BFGS from the first sine mode plus random noise; the
    quotient is scale invariant, so iterates are renormalized in the
    objective.  The returned value is attained by an explicit grid function
    and therefore bounds the discrete constant from above.
    """
    if not 1.5 < p <= 2.0:
        raise ValueError(f"p = {p} outside (3/2, 2]")
    corners = ops.corner_gradient_matrices(grid)
    w = grid.cell_volume
    wc = w / 2**grid.dim

    def fun(u):
        num = 0.0
        dnum = np.zeros_like(u)
        for Es in corners:
            gs = [E @ u for E in Es]
            m2 = np.maximum(sum(g * g for g in gs), 1e-300)
            num += wc * np.sum(m2 ** (p / 2))
            coef = m2 ** ((p - 2) / 2)
            dnum += p * wc * sum(E.T @ (coef * g) for E, g in zip(Es, gs))
        l2sq = w * np.dot(u, u)
        den = l2sq ** (p / 2)
        dden = p * l2sq ** (p / 2 - 1) * w * u
        return num / den, (dnum * den - num * dden) / den**2

    coords = grid.coordinates()
    base = np.ones(grid.shape)
    for x in coords:
        base = base * np.sin(np.pi * x)
    base = base.ravel()
    per_seed, best, best_u, stagnated = [], math.inf, None, False
    for seed in seeds:
        rng = np.random.default_rng(seed)
        u0 = base + 0.1 * rng.standard_normal(base.size)
        res = optimize.minimize(fun, u0, jac=True, method="L-BFGS-B",
                                options={"maxiter": maxiter, "ftol": 1e-14, "gtol": 1e-10})
        u = res.x / math.sqrt(w * np.dot(res.x, res.x))
        val = float(fun(u)[0])
        per_seed.append(val)
        if not res.success and res.nit >= maxiter:
            stagnated = True
        if val < best:
            best, best_u = val, u
    return GammaResult(best, per_seed, best_u.reshape(grid.shape), stagnated)


# ------------------------------------------------------------------ extinction


@dataclass
class ExtinctionReport:
    gamma: float
    hypothesis_lhs: float
    t_star_bound: float | None
    measured_extinction: float | None
    monotone_from: float | None
    reason: str = ""


def hypothesis_lhs(u0_linf: float, u0_l2: float, p: float, delta: float) -> float:
    """``|delta| ||u0||_inf^(2/(p-1)) ||u0||_2^(2-p)``."""
    return abs(delta) * u0_linf ** (2.0 / (p - 1.0)) * u0_l2 ** (2.0 - p)


def t_star_bound(u0_norms: tuple[float, float], p: float, delta: float, gamma: float) -> tuple[float | None, str]:
    """Upper bound on the extinction time, or ``(None, reason)`` when undefined.

    ``u0_norms`` is ``(||u0||_inf, ||u0||_2)``.
    """
    linf, l2 = u0_norms
    if p >= 2:
        return None, "no finite-time extinction for p = 2"
    lhs = hypothesis_lhs(linf, l2, p, delta)
    if not lhs < gamma:
        return None, f"smallness hypothesis violated: {lhs:.6g} >= gamma = {gamma:.6g}"
    p_conj = p / (p - 1.0)
    return p_conj * l2 ** (2.0 - p) / ((gamma - lhs) * (2.0 - p)), ""


def extinction_time(traj: Trajectory, threshold: float) -> float | None:
    """First stored time with ``||u(t)||_2 <= threshold``."""
    for t, s in zip(traj.times, traj.states):
        if l2_norm(s) <= threshold:
            return t
    return None


def monotone_from(traj: Trajectory, rtol: float = 1e-12) -> float | None:
    """Earliest stored time after which ``||u||_2`` never increases."""
    l2 = np.array([l2_norm(s) for s in traj.states])
    if len(l2) == 0:
        return None
    start = len(l2) - 1
    for k in range(len(l2) - 1, 0, -1):
        if l2[k] > l2[k - 1] * (1 + rtol):
            break
        start = k - 1
    return traj.times[start]


def extinction_report(traj: Trajectory, gamma: float, threshold: float | None = None) -> ExtinctionReport:
    u0 = traj.initial
    norms = (float(u0.magnitude.max()), l2_norm(u0))
    p, delta = traj.params.p, traj.params.delta
    if threshold is None:
        from .stepper import EXTINCTION_RTOL

        threshold = EXTINCTION_RTOL * norms[1]
    bound, reason = t_star_bound(norms, p, delta, gamma)
    return ExtinctionReport(
        gamma=gamma,
        hypothesis_lhs=hypothesis_lhs(*norms, p, delta),
        t_star_bound=bound,
        measured_extinction=extinction_time(traj, threshold),
        monotone_from=monotone_from(traj),
        reason=reason,
    )


@dataclass
class EnvelopeCheck:
    max_violation: float
    relative_violation: float
    violations: np.ndarray = field(repr=False)
    rhs: np.ndarray = field(repr=False)


def ode_envelope_check(
    traj: Trajectory, p: float, delta: float, gamma: float, u0_norms: tuple[float, float] | None = None,
    floor: float | None = None,
) -> EnvelopeCheck:
    """Compare the forward difference of ``||u||_2`` with the extinction ODE bound.

    The right side ``(1/p') ||u||^(p-1) (|delta| ||u||^(2-p) ||u0||_inf^(2/(p-1)) - gamma)``
    is evaluated at the left sample of each interval.  Samples whose norm is
    already below ``floor`` are skipped.  ``relative_violation`` divides by
    the largest ``|rhs|`` seen.
    """
    if u0_norms is None:
        u0 = traj.initial
        u0_norms = (float(u0.magnitude.max()), l2_norm(u0))
    linf0 = u0_norms[0]
    t = np.asarray(traj.times)
    y = np.array([l2_norm(s) for s in traj.states])
    if floor is None:
        from .stepper import EXTINCTION_RTOL

        floor = EXTINCTION_RTOL * u0_norms[1]
    p_conj = p / (p - 1.0)
    rhs = (1.0 / p_conj) * y ** (p - 1) * (abs(delta) * y ** (2 - p) * linf0 ** (2 / (p - 1)) - gamma)
    if len(t) < 2:
        return EnvelopeCheck(0.0, 0.0, np.zeros(0), rhs)
    slope = np.diff(y) / np.diff(t)
    live = y[:-1] > floor
    viol = np.where(live, np.maximum(slope - rhs[:-1], 0.0), 0.0)
    scale = float(np.max(np.abs(rhs[:-1][live]))) if np.any(live) else 0.0
    mv = float(viol.max()) if viol.size else 0.0
    return EnvelopeCheck(mv, mv / scale if scale > 0 else 0.0, viol, rhs)


# ----------------------------------------------------- weighted D^2 inequality


@dataclass
class SecondDerivativeReport:
    lhs: float
    laplacian_term: float
    c1: float
    residual: float
    lower_order: float
    implied_c2: float


def c1_constant(p: float, zeta: float) -> float:
    den = p * (p - 1) ** 2 - zeta
    if not den > 0:
        raise ValueError(f"zeta = {zeta} >= p(p-1)^2 = {p * (p - 1) ** 2}: C1 undefined")
    return math.sqrt(p / den)


def default_zeta(p: float) -> float:
    return p * (2 * p - 3) / 2


def lemma24_ratio(v: VectorField, mu: float, p: float, zeta: float | None = None) -> SecondDerivativeReport:
    """Weighted second-derivative inequality: measured terms and implied ``C2``."""
    if not mu > 0:
        raise ValueError("mu must be > 0")
    zeta = default_zeta(p) if zeta is None else zeta
    c1 = c1_constant(p, zeta)
    g = ops.gradient(v)
    weight = (mu + g.magnitude_sq) ** ((p - 2) / 4)
    D = ops.second_derivatives(v)
    d2_sq = np.sum(D**2, axis=(0, 1, 2))
    lap = np.einsum("iaa...->i...", D)
    w = v.grid.cell_volume
    lhs = math.sqrt(float(np.sum(weight**2 * d2_sq)) * w)
    lap_term = math.sqrt(float(np.sum(weight**2 * np.sum(lap**2, axis=0))) * w)
    lower = math.sqrt(ops.grad_lp_norm(v, p) ** p + mu ** (p / 2) * v.grid.volume)
    residual = lhs - c1 * lap_term
    return SecondDerivativeReport(lhs, lap_term, c1, residual, lower, max(residual, 0.0) * zeta / lower)


# -------------------------------------------------------------- Gronwall bound


def gronwall_envelope(t: np.ndarray, C: float, A: np.ndarray, B: np.ndarray, theta: float) -> np.ndarray:
    """Bound for ``Phi <= C + int (A Phi + B Phi^theta)`` sampled on ``t``.

    ``A`` and ``B`` are sampled on the same nodes; integrals use the
    trapezoidal rule.
    """
    if not 0 <= theta < 1:
        raise ValueError("theta must lie in [0, 1)")
    from scipy.integrate import cumulative_trapezoid

    t = np.asarray(t, float)
    IA = cumulative_trapezoid(A, t, initial=0.0)
    k = 1 - theta
    out = np.empty_like(t)
    for i in range(len(t)):
        inner_int = B[: i + 1] * np.exp(k * (IA[i] - IA[: i + 1]))
        tail = np.trapezoid(inner_int, t[: i + 1]) if i else 0.0
        out[i] = (C**k * math.exp(k * IA[i]) + k * tail) ** (1 / k)
    return out
