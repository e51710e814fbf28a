"""Linear dual parabolic problem and the duality-based maximum principle.

The dual runs forward in its own time ``s`` with coefficients read from the
forward trajectory at ``t - s``.  Each dual step is the transpose of one
forward step: the frozen-coefficient implicit diffusion solve followed by
the explicit drift ``delta (phi div w + w . grad phi)`` with ``w = J_mu(v)``.
With unmollified coefficients and the conservative drift form the pairing
``(v(t), phi0) = (v0, phi(t))`` therefore holds to solver tolerance.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import operators as ops
from .fields import Grid, SimParams, Trajectory, VectorField, inner, l1_norm
from .stepper import SchemeConfig, solve_spd, transport_velocity


@dataclass
class DualCoefficients:
    """Time-reversed coefficients: index ``k`` is dual time ``s_k = t - t_{N-k}``."""

    a_eta: np.ndarray  # (N+1,) + grid shape
    drift: np.ndarray  # (N+1, dim) + grid shape, already scaled by delta
    drift_div: np.ndarray  # (N+1,) + grid shape
    s: np.ndarray
    horizon: float
    grid: Grid
    eta: float | None
    mu: float
    p: float
    clamped: int = 0

    @property
    def n_steps(self) -> int:
        return len(self.s) - 1


def build_dual_coefficients(
    traj: Trajectory, t: float, eta: float | None, mu: float, p: float, mollify: bool = True
) -> DualCoefficients:
    """Mollify, map through the coefficient law and time-reverse.

    With ``mollify=False`` (or ``eta=None``) the raw nodal coefficients of the
    forward scheme are used, which makes the dual the exact discrete adjoint.
    """
    if not mu > 0:
        raise ValueError("the dual problem requires mu > 0")
    times = np.asarray(traj.times)
    k_end = int(np.argmin(np.abs(times - t)))
    if abs(times[k_end] - t) > 1e-12 * max(1.0, t) or t <= 0:
        raise ValueError(f"trajectory does not contain horizon t = {t}")
    sub = Trajectory(traj.params, list(traj.times[: k_end + 1]), list(traj.states[: k_end + 1]),
                     list(traj.diagnostics[: k_end + 1]))
    params = traj.params
    if mollify and eta is not None:
        grads = ops.mollify_spacetime(sub, eta)
    else:
        grads = [ops.gradient(s) for s in sub.states]
    coefs = [ops.diffusion_coefficient(g, mu, p) for g in grads]
    a = np.stack([c.values for c in coefs])
    clamped = sum(c.clamped for c in coefs)
    if params.delta:
        w = np.stack([params.delta * transport_velocity(s, params).values for s in sub.states])
        div = np.stack([ops.divergence(VectorField(s.grid, wi)) for s, wi in zip(sub.states, w)])
    else:
        w = np.zeros((len(sub),) + sub.initial.values.shape)
        div = np.zeros((len(sub),) + sub.initial.grid.shape)
    s = t - times[: k_end + 1][::-1]
    return DualCoefficients(a[::-1].copy(), w[::-1].copy(), div[::-1].copy(), s, t,
                            sub.initial.grid, eta if mollify else None, mu, p, clamped)


def _drift_apply(phi: np.ndarray, w: np.ndarray, div: np.ndarray, grid: Grid, form: str) -> np.ndarray:
    if form == "advective":
        G = ops.gradient(VectorField(grid, phi)).tensor
        return phi * div[None] + np.einsum("b...,ib...->i...", w, G)
    if form == "conservative":
        out = np.zeros_like(phi)
        for c in range(grid.dim):
            flux = VectorField(grid, w * phi[c][None])
            out[c] = ops.divergence(flux)
        return out
    raise ValueError(f"unknown drift form {form!r}")


def dual_run(
    phi0: VectorField,
    coeffs: DualCoefficients,
    nu: float,
    dt: float | None = None,
    cfg: SchemeConfig = SchemeConfig(),
    drift_form: str = "advective",
) -> Trajectory:
    """Integrate the dual system over ``[0, horizon]``.

    The dual step from ``s_m`` to ``s_{m+1}`` solves the implicit diffusion
    with the coefficient at ``s_{m+1}`` and then adds the drift explicitly.
    ``dt`` must match the spacing of ``coeffs`` when given.
    """
    if nu < 0:
        raise ValueError("nu must be >= 0")
    grid = coeffs.grid
    if phi0.grid != grid:
        raise ValueError("phi0 grid differs from the coefficient grid")
    steps = np.diff(coeffs.s)
    if dt is not None and not np.allclose(steps[:-1] if len(steps) > 1 else steps, dt, rtol=1e-9, atol=0):
        raise ValueError("dt does not match the coefficient time grid")
    dparams = SimParams(p=coeffs.p, mu=coeffs.mu, nu=nu, delta=0.0,
                        dim=grid.dim, n_cells=grid.n, dt=float(steps[0]) if len(steps) else 1.0,
                        t_end=coeffs.horizon)
    out = Trajectory(dparams)
    out.append(0.0, VectorField(grid, phi0.values, 0.0))
    phi = phi0.values.copy()
    K1 = ops.stiffness_matrix(grid, None) if nu else None
    ident = sp.identity(int(np.prod(grid.shape)), format="csr")
    for m in range(coeffs.n_steps):
        h = float(steps[m])
        K = ops.stiffness_matrix(grid, coeffs.a_eta[m + 1])
        if K1 is not None:
            K = K + nu * K1
        A = sp.csr_matrix(ident + h * K)
        psi = solve_spd(A, phi.reshape(grid.dim, -1), cfg.linear_solver_tol, cfg.max_linear_iters)
        psi = psi.reshape(phi.shape)
        if np.any(coeffs.drift[m + 1]):
            psi = psi + h * _drift_apply(psi, coeffs.drift[m + 1], coeffs.drift_div[m + 1], grid, drift_form)
        if not np.all(np.isfinite(psi)):
            out.status = "aborted"
            raise FloatingPointError(f"non-finite dual state at s = {coeffs.s[m + 1]:.6g}")
        phi = psi
        out.append(float(coeffs.s[m + 1]), VectorField(grid, phi, float(coeffs.s[m + 1])))
    return out


def duality_residual(
    forward: Trajectory,
    t: float,
    phi0: VectorField,
    eta: float | None,
    nu_dual: float | None = None,
    dt: float | None = None,
    mollify: bool = True,
    drift_form: str = "advective",
    cfg: SchemeConfig = SchemeConfig(),
) -> float:
    """``|(v(t), phi0) - (v0, phi(t))|`` for the dual driven by ``forward``."""
    params = forward.params
    nu = params.nu if nu_dual is None else nu_dual
    coeffs = build_dual_coefficients(forward, t, eta, params.mu, params.p, mollify=mollify)
    dual = dual_run(phi0, coeffs, nu, dt, cfg, drift_form)
    return abs(inner(forward.state_at(t), phi0) - inner(forward.initial, dual.final))


# ----------------------------------------------------------------- test data


def smooth_bump(grid: Grid, center, radius: float, component: int = 0, l1: float = 1.0) -> VectorField:
    """``exp(-1/(1 - |x - x0|^2/rho^2))`` in one component, scaled to the given L^1 mass."""
    coords = grid.coordinates()
    center = np.broadcast_to(np.asarray(center, float), (grid.dim,))
    r2 = sum((x - c) ** 2 for x, c in zip(coords, center)) / radius**2
    bump = np.zeros(grid.shape)
    inside = r2 < 1
    bump[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    if not bump.any():
        raise ValueError("bump support contains no grid node")
    vals = np.zeros((grid.dim,) + grid.shape)
    vals[component] = bump
    f = VectorField(grid, vals)
    return f * (l1 / l1_norm(f))


def point_mass(grid: Grid, node: tuple[int, ...], direction=None) -> VectorField:
    """Discrete unit-L^1 approximation of a Dirac mass at ``node``."""
    vals = np.zeros((grid.dim,) + grid.shape)
    e = np.zeros(grid.dim) if direction is None else np.asarray(direction, float)
    if direction is None:
        e[0] = 1.0
    e = e / np.linalg.norm(e)
    vals[(slice(None),) + tuple(node)] = e / grid.cell_volume
    return VectorField(grid, vals)


# ------------------------------------------------------------ L^1 and L^inf


@dataclass
class L1Report:
    initial: float
    sup: float
    ratio: float


def l1_stability(dual: Trajectory) -> L1Report:
    norms = [l1_norm(s) for s in dual.states]
    return L1Report(norms[0], max(norms), max(norms) / norms[0] if norms[0] else 0.0)


@dataclass
class LinfReport:
    overshoot: np.ndarray = field(repr=False)
    max_overshoot: float = 0.0
    u0_linf: float = 0.0

    @property
    def relative(self) -> float:
        return self.max_overshoot / self.u0_linf if self.u0_linf else 0.0


def linf_bound_check(forward: Trajectory) -> LinfReport:
    """Per-snapshot ``max(0, ||v(t)||_inf - ||v0||_inf)`` and its maximum."""
    u0 = float(forward.initial.magnitude.max())
    over = np.array([max(0.0, float(s.magnitude.max()) - u0) for s in forward.states])
    return LinfReport(over, float(over.max()) if over.size else 0.0, u0)


def sup_pairing(v: VectorField) -> float:
    """``max over unit point masses of (v, phi)``: recovers ``||v||_inf``."""
    mag = v.magnitude
    node = np.unravel_index(int(np.argmax(mag)), mag.shape)
    if mag[node] == 0:
        return 0.0
    return inner(v, point_mass(v.grid, node, v.values[(slice(None),) + node]))


def random_forward_params(rng: np.random.Generator, base: SimParams) -> SimParams:
    """Randomized parameter draw around ``base`` for stability sweeps."""
    return base.replace(
        p=float(rng.uniform(1.6, 2.0)),
        mu=float(rng.uniform(0.05, 1.0)),
        delta=float(rng.uniform(-2.0, 2.0)),
    )
