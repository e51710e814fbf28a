"""Discrete spatial operators on the interior grid.

Two gradients appear here.  The nodal gradient (centered differences, zero
ghost values) feeds the diffusion coefficient, the convection term and the
nodal norms.  The face gradient (forward differences between neighbouring
nodes, boundary included) carries the diffusion flux, so that

    <div(a grad v), w> = -<a grad v, grad w>_faces

holds exactly for every pair of grid fields.
"""
from __future__ import annotations

import functools
import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy import signal

from .fields import Grid, Trajectory, VectorField

DEGENERATE_FLOOR = 1e-30


@dataclass(frozen=True)
class GradientField:
    """Nodal Jacobian ``tensor[i, b] = d_b v_i`` and ``|grad v|^2``."""

    grid: Grid
    tensor: np.ndarray
    magnitude_sq: np.ndarray


@dataclass(frozen=True)
class MollifierKernel:
    radius: float
    samples: np.ndarray

    @property
    def is_identity(self) -> bool:
        return self.samples.size == 1


@dataclass
class CoefficientField:
    """Nodal diffusion coefficient with the count of clamped degenerate nodes."""

    values: np.ndarray
    clamped: int = 0


# ------------------------------------------------------------------ gradients


def _shift(padded: np.ndarray, axis: int, offset: int, n: int) -> np.ndarray:
    """Slice of a padded array (component axis first) shifted along ``axis``."""
    idx = [slice(None)] + [slice(1, n + 1)] * (padded.ndim - 1)
    idx[axis + 1] = slice(1 + offset, n + 1 + offset)
    return padded[tuple(idx)]


def gradient(v: VectorField) -> GradientField:
    """Centered second-order nodal gradient with zero Dirichlet ghosts."""
    g = v.grid
    P = v.padded()
    tensor = np.empty((g.dim, g.dim) + g.shape)
    for b in range(g.dim):
        tensor[:, b] = (_shift(P, b, 1, g.n) - _shift(P, b, -1, g.n)) / (2 * g.h)
    return GradientField(g, tensor, np.sum(tensor**2, axis=(0, 1)))


def face_gradient(v: VectorField, axis: int) -> np.ndarray:
    """Forward differences across the ``n + 1`` faces along ``axis``.

    Output shape is ``(dim,) + shape`` with ``n + 1`` entries on ``axis``.
    """
    pad = [(0, 0)] * (v.grid.dim + 1)
    pad[axis + 1] = (1, 1)
    return np.diff(np.pad(v.values, pad), axis=axis + 1) / v.grid.h


def face_average(a: np.ndarray, axis: int) -> np.ndarray:
    """Arithmetic face average of a nodal scalar.

    Boundary faces average the first node with a quadratically extrapolated
    ghost value, so their error matches the interior faces and the flux
    difference stays second order.  The ghost is floored at zero, which keeps
    every face coefficient at least half its neighbour.
    """
    n = a.shape[axis]
    pad = [(0, 0)] * a.ndim
    pad[axis] = (1, 1)
    ap = np.pad(a, pad, mode="edge")
    if n >= 3:
        def take(i):
            return np.take(a, [i], axis=axis)

        lo_ghost = np.maximum(3.0 * (take(0) - take(1)) + take(2), 0.0)
        hi_ghost = np.maximum(3.0 * (take(n - 1) - take(n - 2)) + take(n - 3), 0.0)
        first = [slice(None)] * a.ndim
        last = [slice(None)] * a.ndim
        first[axis] = slice(0, 1)
        last[axis] = slice(n + 1, n + 2)
        ap[tuple(first)] = lo_ghost
        ap[tuple(last)] = hi_ghost
    lo = [slice(None)] * a.ndim
    hi = [slice(None)] * a.ndim
    lo[axis] = slice(0, -1)
    hi[axis] = slice(1, None)
    return 0.5 * (ap[tuple(lo)] + ap[tuple(hi)])


def diffusion_coefficient(g: GradientField, mu: float, p: float) -> CoefficientField:
    """Nodal ``(mu + |grad v|^2)^((p-2)/2)``.

    Nodes where ``mu + |grad v|^2`` is exactly zero get the floor
    ``DEGENERATE_FLOOR`` added and are counted in ``clamped``.
    """
    if mu < 0:
        raise ValueError("mu must be >= 0")
    if p == 2:
        return CoefficientField(np.ones_like(g.magnitude_sq))
    base = mu + g.magnitude_sq
    zero = base == 0.0
    clamped = int(np.count_nonzero(zero))
    if clamped:
        base = np.where(zero, DEGENERATE_FLOOR, base)
    return CoefficientField(base ** ((p - 2.0) / 2.0), clamped)


def coefficient_of(v: VectorField, mu: float, p: float) -> CoefficientField:
    return diffusion_coefficient(gradient(v), mu, p)


def flux_divergence(v: VectorField, a: np.ndarray) -> np.ndarray:
    """``div(a grad v)`` in flux-difference form with face-averaged ``a``."""
    g = v.grid
    out = np.zeros_like(v.values)
    for b in range(g.dim):
        flux = face_average(a, b)[None] * face_gradient(v, b)
        out += np.diff(flux, axis=b + 1) / g.h
    return out


def p_laplacian_apply(v: VectorField, mu: float, p: float) -> VectorField:
    """``+div((mu + |grad v|^2)^((p-2)/2) grad v)`` evaluated on the grid."""
    a = coefficient_of(v, mu, p).values
    return v.with_values(flux_divergence(v, a))


def laplacian(v: VectorField) -> VectorField:
    """Standard (2d+1)-point Laplacian with zero boundary values."""
    g = v.grid
    P = v.padded()
    out = -2.0 * g.dim * v.values
    for b in range(g.dim):
        out = out + _shift(P, b, 1, g.n) + _shift(P, b, -1, g.n)
    return v.with_values(out / g.h**2)


def face_energy(v: VectorField, a: np.ndarray | None = None, w: VectorField | None = None) -> float:
    """``<a grad v, grad w>`` summed over faces (``w = v`` and ``a = 1`` by default)."""
    g = v.grid
    w = v if w is None else w
    total = 0.0
    for b in range(g.dim):
        gv = face_gradient(v, b)
        gw = gv if w is v else face_gradient(w, b)
        prod = gv * gw
        if a is not None:
            prod = face_average(a, b)[None] * prod
        total += float(np.sum(prod))
    return total * g.cell_volume


def grad_l2_norm(v: VectorField) -> float:
    """``||grad v||_2`` from face differences (the discrete Dirichlet energy)."""
    return math.sqrt(face_energy(v))


def grad_lp_norm(v: VectorField, p: float) -> float:
    """``||grad v||_p`` averaged over the cell-corner gradients.

    Centered differences have a checkerboard null space, so the nodal
    gradient cannot be used here.
    """
    return grad_lp_power(v.values.reshape(v.grid.dim, -1), v.grid, p) ** (1.0 / p)


def grad_lp_power(values: np.ndarray, grid: Grid, p: float) -> float:
    """``||grad u||_p^p`` for flattened components ``values`` of shape ``(k, n^d)``."""
    total = 0.0
    for corner in corner_gradient_matrices(grid):
        m2 = sum(np.sum((E @ values.T) ** 2, axis=1) for E in corner)
        total += float(np.sum(m2 ** (p / 2.0)))
    return total * grid.cell_volume / 2**grid.dim


def weighted_flux_norm(v: VectorField, mu: float, p: float) -> float:
    """``||(mu + |grad v|^2)^((p-2)/4) grad v||_2``, the dissipation of the flux form."""
    a = coefficient_of(v, mu, p).values
    return math.sqrt(face_energy(v, a))


def convection(w: VectorField, v: VectorField) -> VectorField:
    """Nodal ``(w . grad) v`` with centered differences on ``v``."""
    if w.grid != v.grid:
        raise ValueError(f"grid mismatch: {w.grid} vs {v.grid}")
    G = gradient(v).tensor
    return v.with_values(np.einsum("b...,ib...->i...", w.values, G))


def divergence(w: VectorField) -> np.ndarray:
    """Centered nodal divergence."""
    G = gradient(w).tensor
    return np.einsum("bb...->...", G)


def second_derivatives(v: VectorField) -> np.ndarray:
    """Nodal Hessian ``D[i, a, b] = d_a d_b v_i`` by second differences."""
    g = v.grid
    P = v.padded()
    D = np.empty((g.dim, g.dim, g.dim) + g.shape)
    for a in range(g.dim):
        D[:, a, a] = (_shift(P, a, 1, g.n) - 2 * v.values + _shift(P, a, -1, g.n)) / g.h**2
    if g.dim > 1:
        G = gradient(v).tensor
        for a in range(g.dim):
            ga = v.with_values(G[:, a])
            Ga = gradient(ga).tensor
            for b in range(g.dim):
                if a != b:
                    D[:, a, b] = Ga[:, b]
        for a in range(g.dim):
            for b in range(a + 1, g.dim):
                sym = 0.5 * (D[:, a, b] + D[:, b, a])
                D[:, a, b] = D[:, b, a] = sym
    return D


# ------------------------------------------------------------- sparse operators


@functools.lru_cache(maxsize=16)
def face_difference_matrices(grid: Grid) -> tuple[sp.csr_matrix, ...]:
    """Sparse forward-difference maps from nodes to faces, one per axis."""
    n, h = grid.n, grid.h
    d1 = sp.diags([np.ones(n), -np.ones(n)], [0, -1], shape=(n + 1, n)) / h
    mats = []
    for b in range(grid.dim):
        parts = [sp.identity(n, format="csr")] * grid.dim
        parts[b] = d1
        M = parts[0]
        for P in parts[1:]:
            M = sp.kron(M, P)
        mats.append(sp.csr_matrix(M))
    return tuple(mats)


@functools.lru_cache(maxsize=16)
def corner_gradient_matrices(grid: Grid) -> tuple[tuple[sp.csr_matrix, ...], ...]:
    """Edge-difference maps from nodes to the ``(n+1)^d`` cells, one set per corner.

    Corner ``c`` of a cell sees, along axis ``b``, the edge through that
    corner.  In one dimension this is the face difference.
    """
    n, h = grid.n, grid.h
    d1 = sp.diags([np.ones(n), -np.ones(n)], [0, -1], shape=(n + 1, n)) / h
    pick = {0: sp.eye(n + 1, n, k=-1), 1: sp.eye(n + 1, n, k=0)}
    out = []
    for corner in itertools.product((0, 1), repeat=grid.dim):
        mats = []
        for b in range(grid.dim):
            parts = [d1 if a == b else pick[corner[a]] for a in range(grid.dim)]
            M = parts[0]
            for P in parts[1:]:
                M = sp.kron(M, P)
            mats.append(sp.csr_matrix(M))
        out.append(tuple(mats))
    return tuple(out)


def stiffness_matrix(grid: Grid, a: np.ndarray | None = None) -> sp.csr_matrix:
    """Matrix of ``-div(a grad .)`` acting on one scalar component."""
    K = None
    for b, D in enumerate(face_difference_matrices(grid)):
        if a is None:
            W = sp.identity(D.shape[0], format="csr")
        else:
            W = sp.diags(face_average(a, b).ravel())
        term = D.T @ W @ D
        K = term if K is None else K + term
    return sp.csr_matrix(K)


# ------------------------------------------------------------------ mollifiers


def mollifier_radius(mu: float, h: float) -> float:
    """Radius of the spatial mollifier tied to ``mu``: ``max(mu, 2h)``."""
    return max(mu, 2.0 * h)


def _bump(r2: np.ndarray) -> np.ndarray:
    out = np.zeros_like(r2)
    inside = r2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


def make_kernel(grid: Grid, radius: float) -> MollifierKernel:
    """Radial bump ``exp(-1/(1-|x|^2/r^2))`` sampled on the grid and renormalized."""
    if not radius > 0:
        raise ValueError("mollifier radius must be > 0")
    m = max(int(math.ceil(radius / grid.h)) - 1, 0)
    if radius <= grid.h:
        m = 0
    offs = grid.h * np.arange(-m, m + 1)
    coords = np.meshgrid(*([offs] * grid.dim), indexing="ij")
    r2 = sum(c**2 for c in coords) / radius**2
    w = _bump(r2)
    w /= w.sum()
    return MollifierKernel(radius, w)


def _convolve(arr: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    if kernel.size <= 125:
        return signal.convolve(arr, kernel, mode="same", method="direct")
    return signal.fftconvolve(arr, kernel, mode="same")


def mollify_array(values: np.ndarray, kernel: MollifierKernel) -> np.ndarray:
    """Convolve every leading-axis slice of ``values`` with zero extension."""
    if kernel.is_identity:
        return np.array(values, dtype=float)
    return np.stack([_convolve(c, kernel.samples) for c in values])


def mollify_space(v: VectorField, radius: float) -> VectorField:
    """Friedrichs mollification of ``v`` (zero outside the domain)."""
    if radius < v.grid.h:
        warnings.warn(
            f"mollifier radius {radius:g} below grid spacing {v.grid.h:g}; returning input",
            stacklevel=2,
        )
        return v
    return v.with_values(mollify_array(v.values, make_kernel(v.grid, radius)))


def time_kernel(dt: float, radius: float) -> np.ndarray:
    m = int(math.ceil(radius / dt)) - 1
    if m <= 0:
        return np.ones(1)
    s = np.arange(-m, m + 1) * dt / radius
    w = _bump(s**2)
    return w / w.sum()


def mollify_spacetime(traj: Trajectory, eta: float) -> list[GradientField]:
    """Gradients of the stored states smoothed by a time x space bump of radius ``eta``.

    The time axis is reflected at both ends.  Snapshots must be uniformly
    spaced in time (apart from a shorter final gap).
    """
    if not eta > 0:
        raise ValueError("eta must be > 0")
    times = np.asarray(traj.times)
    span = times[-1] - times[0] if len(times) > 1 else 0.0
    if len(times) > 1 and eta > 0.5 * span:
        raise ValueError(f"eta = {eta:g} exceeds half the trajectory span {span:g}")
    grid = traj.initial.grid
    G = np.stack([gradient(s).tensor for s in traj.states])  # (T, d, d, ...)
    if len(times) > 1:
        dt = float(times[1] - times[0])
        tk = time_kernel(dt, eta)
        if tk.size > 1:
            from scipy.ndimage import convolve1d

            G = convolve1d(G, tk, axis=0, mode="reflect")
    kern = make_kernel(grid, eta)
    out = []
    for Gt in G:
        flat = Gt.reshape((grid.dim * grid.dim,) + grid.shape)
        sm = mollify_array(flat, kern).reshape(Gt.shape)
        out.append(GradientField(grid, sm, np.sum(sm**2, axis=(0, 1))))
    return out
