"""Spectral Galerkin solver on the Dirichlet sine eigenbasis.

The solution is expanded as ``v = sum_j c_j a_j`` with vector basis functions
``a_j = e_c prod_b sqrt(2) sin(k_b pi x_b)``.  The coefficient ODE is
integrated with classical RK4; it shares no discretization with the
finite-difference stepper, which makes it usable as an independent check.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import operators as ops
from .fields import Grid, SimParams, VectorField


class AliasingError(ValueError):
    pass


class BlowUpError(RuntimeError):
    pass


@dataclass(frozen=True)
class SpectralBasis:
    """Scalar sine modes on a collocation grid, crossed with the ``dim`` components.

    Vector basis index ``j`` maps to component ``j // n_scalar`` and scalar
    mode ``j % n_scalar``.
    """

    dim: int
    modes_per_axis: int
    quad_points: int
    modes: np.ndarray  # (n_scalar, dim) multi-indices
    scalar_eigenvalues: np.ndarray
    phi: np.ndarray  # (n_scalar,) + quad shape
    dphi: np.ndarray  # (n_scalar, dim) + quad shape
    dphi_closed: np.ndarray  # gradients on the closed grid including boundary nodes
    closed_weights: np.ndarray  # tensor trapezoid weights on the closed grid

    @property
    def n_scalar(self) -> int:
        return len(self.modes)

    @property
    def size(self) -> int:
        return self.dim * self.n_scalar

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.tile(self.scalar_eigenvalues, self.dim)

    @property
    def quad_grid(self) -> Grid:
        return Grid(self.dim, self.quad_points)

    @property
    def quad_weight(self) -> float:
        return (1.0 / (self.quad_points + 1)) ** self.dim


def _sine_values(modes: np.ndarray, coords: list[np.ndarray]):
    """Basis values and gradients of the scalar modes at the given points."""
    n_s, d = modes.shape
    shape = coords[0].shape
    phi = np.ones((n_s,) + shape)
    dphi = np.ones((n_s, d) + shape)
    for s, k in enumerate(modes):
        sins = [math.sqrt(2) * np.sin(k[b] * math.pi * coords[b]) for b in range(d)]
        coss = [math.sqrt(2) * k[b] * math.pi * np.cos(k[b] * math.pi * coords[b]) for b in range(d)]
        phi[s] = np.prod(sins, axis=0)
        for b in range(d):
            dphi[s, b] = np.prod([coss[a] if a == b else sins[a] for a in range(d)], axis=0)
    return phi, dphi


def build_basis(dim: int, modes_per_axis: int, quad_points: int | None = None) -> SpectralBasis:
    """Tensor-product sine basis with ``modes_per_axis`` modes along each axis.

    ``quad_points`` defaults to ``4 * modes_per_axis``; fewer than
    ``2 * modes_per_axis + 1`` would alias quadratic products and is refused.
    """
    if modes_per_axis < 1:
        raise ValueError("modes_per_axis must be >= 1")
    if quad_points is None:
        quad_points = 4 * modes_per_axis
    if quad_points < 2 * modes_per_axis + 1:
        raise AliasingError(
            f"quad_points = {quad_points} < 2*modes+1 = {2 * modes_per_axis + 1}"
        )
    modes = np.array(list(itertools.product(range(1, modes_per_axis + 1), repeat=dim)), dtype=int)
    eig = math.pi**2 * np.sum(modes**2, axis=1).astype(float)
    grid = Grid(dim, quad_points)
    phi, dphi = _sine_values(modes, grid.coordinates())
    # gradient products do not vanish on the boundary; their even extension is
    # smooth and periodic, so the closed trapezoid rule stays spectrally accurate
    x = np.linspace(0.0, 1.0, quad_points + 2)
    w1 = np.full(x.size, 1.0 / (quad_points + 1))
    w1[[0, -1]] *= 0.5
    closed = np.meshgrid(*([x] * dim), indexing="ij")
    _, dphi_closed = _sine_values(modes, closed)
    weights = np.ones(closed[0].shape)
    for b in range(dim):
        weights = weights * w1.reshape([-1 if a == b else 1 for a in range(dim)])
    return SpectralBasis(dim, modes_per_axis, quad_points, modes, eig, phi, dphi, dphi_closed, weights)


@dataclass
class GalerkinState:
    coeffs: np.ndarray  # (dim, n_scalar)
    basis: SpectralBasis = field(repr=False)
    params: SimParams = field(repr=False)
    time: float = 0.0

    @property
    def l2_norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))


def project(u0, basis: SpectralBasis, quad_points: int | None = None) -> np.ndarray:
    """Coefficients ``(u0, a_j)`` by quadrature.

    ``u0`` is either a :class:`VectorField` (nodal midpoint quadrature on its
    own grid) or a callable ``f(*coords) -> array (dim,) + shape`` evaluated
    on a collocation grid with ``quad_points`` nodes per axis.
    """
    if isinstance(u0, VectorField):
        grid = u0.grid
        if grid.dim != basis.dim:
            raise ValueError("dimension mismatch")
        phi, _ = _sine_values(basis.modes, grid.coordinates())
        vals = u0.values
        w = grid.cell_volume
    else:
        q = quad_points or basis.quad_points
        grid = Grid(basis.dim, q)
        coords = grid.coordinates()
        vals = np.asarray(u0(*coords), dtype=float).reshape((basis.dim,) + grid.shape)
        phi, _ = (basis.phi, None) if q == basis.quad_points else _sine_values(basis.modes, coords)
        w = grid.cell_volume
    axes = tuple(range(1, basis.dim + 1))
    return np.stack([np.tensordot(phi, vals[c], axes=(axes, tuple(range(basis.dim)))) for c in range(basis.dim)]) * w


def reconstruct(state: GalerkinState, grid: Grid) -> VectorField:
    """Evaluate the truncated series at the interior nodes of ``grid``."""
    basis = state.basis
    if grid.dim != basis.dim:
        raise ValueError("dimension mismatch")
    phi, _ = _sine_values(basis.modes, grid.coordinates())
    vals = np.tensordot(state.coeffs, phi, axes=(1, 0))
    return VectorField(grid, vals, state.time)


class GalerkinSystem:
    """Precomputed linear and convective tensors for one parameter set.

    ``B[c][i, l, j] = (J(phi_i) d_c phi_l, phi_j)`` holds the convective
    tensor per transported direction ``c``; the vector tensor
    ``B_{jil} = (J(a_i) . grad a_l, a_j)`` is its component-diagonal lift.
    """

    def __init__(self, basis: SpectralBasis, params: SimParams):
        if not params.mu > 0:
            raise ValueError("the Galerkin system requires mu > 0")
        if params.dim != basis.dim:
            raise ValueError("dimension mismatch between basis and params")
        self.basis = basis
        self.params = params
        qgrid = basis.quad_grid
        self.radius = ops.mollifier_radius(params.mu, qgrid.h)
        kernel = ops.make_kernel(qgrid, self.radius)
        self.mollified_phi = ops.mollify_array(basis.phi, kernel)
        w = basis.quad_weight
        self.stiffness = np.diag(basis.scalar_eigenvalues)
        d = basis.dim
        n_s = basis.n_scalar
        jphi = self.mollified_phi.reshape(n_s, -1)
        phi = basis.phi.reshape(n_s, -1)
        self.B = np.stack([
            np.einsum("iq,lq,jq->ilj", jphi, basis.dphi[:, c].reshape(n_s, -1), phi, optimize=True) * w
            for c in range(d)
        ])

    def vector_tensor(self) -> np.ndarray:
        """Dense ``B_{jil}`` over the full vector basis."""
        b = self.basis
        n, d = b.n_scalar, b.dim
        out = np.zeros((b.size, b.size, b.size))
        for ci, cl in itertools.product(range(d), repeat=2):
            # a_j must share the component of a_l
            block = self.B[ci].transpose(2, 0, 1)  # (j, i, l)
            out[cl * n:(cl + 1) * n, ci * n:(ci + 1) * n, cl * n:(cl + 1) * n] = block
        return out

    def diffusion_matrix(self, coeffs: np.ndarray) -> np.ndarray:
        """Scalar block of ``d_{ji} = (a(mu, v) grad a_i, grad a_j)`` by collocation."""
        b, p, mu = self.basis, self.params.p, self.params.mu
        if p == 2:
            return self.stiffness.copy()
        n_s, d = b.n_scalar, b.dim
        g = b.dphi_closed.reshape(n_s, d, -1)
        grad = np.einsum("cs,sbq->cbq", coeffs, g, optimize=True)
        a = (mu + np.sum(grad**2, axis=(0, 1))) ** ((p - 2) / 2)
        return np.einsum("q,sbq,tbq->st", a * b.closed_weights.ravel(), g, g, optimize=True)

    def convective(self, coeffs: np.ndarray) -> np.ndarray:
        """``sum_{i,l} B_{jil} c_i c_l`` arranged as ``(dim, n_scalar)``."""
        # transported component ci carries J(v)_ci; result lives on the component of a_l
        return np.einsum("cilj,ci,kl->kj", self.B, coeffs, coeffs)

    def rhs(self, coeffs: np.ndarray) -> np.ndarray:
        nu, delta = self.params.nu, self.params.delta
        out = -(self.diffusion_matrix(coeffs) @ coeffs.T).T
        if nu:
            out -= nu * coeffs * self.basis.scalar_eigenvalues
        if delta:
            out -= delta * self.convective(coeffs)
        return out

    def power(self, coeffs: np.ndarray) -> float:
        """``c . dc/dt``: the right side of the Galerkin energy identity."""
        return float(np.sum(coeffs * self.rhs(coeffs)))


def rhs(state: GalerkinState, system: GalerkinSystem | None = None) -> np.ndarray:
    """Time derivative of the coefficients."""
    system = system or GalerkinSystem(state.basis, state.params)
    return system.rhs(state.coeffs)


@dataclass
class GalerkinRun:
    states: list[GalerkinState]
    energy_residual: list[float]

    @property
    def final(self) -> GalerkinState:
        return self.states[-1]

    @property
    def times(self) -> list[float]:
        return [s.time for s in self.states]


def integrate(
    c0: np.ndarray,
    params: SimParams,
    dt: float,
    t_end: float,
    basis: SpectralBasis,
    stride: int = 1,
) -> GalerkinRun:
    """Classical RK4 on the coefficient ODE.

    The energy ``E = |c|^2 / 2`` is advanced alongside with the same stages;
    ``energy_residual[n] = |E_n - |c_n|^2 / 2|`` measures how well the
    discrete trajectory honours the energy identity.
    """
    system = GalerkinSystem(basis, params)
    c = np.array(c0, dtype=float).reshape(basis.dim, basis.n_scalar)
    guard = 1e6 * max(np.linalg.norm(c), 1e-300)
    n_steps = max(int(math.ceil(t_end / dt - 1e-9)), 0)
    E = 0.5 * float(np.sum(c * c))
    states = [GalerkinState(c.copy(), basis, params, 0.0)]
    resid = [0.0]
    t = 0.0
    f = system.rhs
    for k in range(1, n_steps + 1):
        h = min(dt, t_end - t) if k == n_steps else dt
        k1 = f(c)
        y2 = c + 0.5 * h * k1
        k2 = f(y2)
        y3 = c + 0.5 * h * k2
        k3 = f(y3)
        y4 = c + h * k3
        k4 = f(y4)
        P = [np.sum(c * k1), np.sum(y2 * k2), np.sum(y3 * k3), np.sum(y4 * k4)]
        E += h / 6 * (P[0] + 2 * P[1] + 2 * P[2] + P[3])
        c = c + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t = t_end if k == n_steps else k * dt
        if not np.all(np.isfinite(c)) or np.linalg.norm(c) > guard:
            raise BlowUpError(f"coefficients blew up at t = {t:.6g}")
        if k % stride == 0 or k == n_steps:
            states.append(GalerkinState(c.copy(), basis, params, t))
            resid.append(abs(E - 0.5 * float(np.sum(c * c))))
    return GalerkinRun(states, resid)
