"""Grids, vector fields, parameters and trajectories on the unit box.

Fields live on the interior nodes of a uniform grid over ``(0, 1)^d``; the
boundary nodes carry zero (homogeneous Dirichlet) and are never stored.
Quadrature is the midpoint rule with weight ``h^d`` per interior node.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, fields as dc_fields
from typing import Any, Mapping

import numpy as np


class ParameterError(ValueError):
    """Raised for parameter sets outside the admissible range."""


@dataclass(frozen=True)
class SimParams:
    """Continuum and scheme parameters of one simulation.

    ``p`` is the growth exponent, ``mu`` the shift inside the diffusion
    coefficient, ``nu`` the added viscosity, ``delta`` the signed convection
    strength and ``eta`` the dual mollification radius.
    """

    p: float = 1.8
    mu: float = 0.0
    nu: float = 0.0
    delta: float = 1.0
    alpha: float | None = None
    dim: int = 1
    n_cells: int = 63
    dt: float = 1e-3
    t_end: float = 0.1
    eta: float | None = None

    def __post_init__(self):
        if not (1.5 < self.p <= 2.0):
            raise ParameterError(f"p = {self.p} outside the interval (3/2, 2]")
        if self.mu < 0:
            raise ParameterError(f"mu = {self.mu} must be >= 0")
        if self.nu < 0:
            raise ParameterError(f"nu = {self.nu} must be >= 0")
        if not math.isfinite(self.delta):
            raise ParameterError("delta must be finite")
        if self.dim not in (1, 2, 3):
            raise ParameterError(f"dim = {self.dim} must be 1, 2 or 3")
        if self.n_cells < 3:
            raise ParameterError(f"n_cells = {self.n_cells} must be >= 3")
        if not self.dt > 0:
            raise ParameterError(f"dt = {self.dt} must be > 0")
        if self.t_end < 0:
            raise ParameterError(f"t_end = {self.t_end} must be >= 0")
        if self.eta is not None and not self.eta > 0:
            raise ParameterError(f"eta = {self.eta} must be > 0")
        if self.alpha is not None and self.alpha <= self.alpha_min:
            raise ParameterError(
                f"alpha = {self.alpha} must exceed (4-p)/p = {self.alpha_min:.6g}"
            )

    @property
    def alpha_min(self) -> float:
        return (4.0 - self.p) / self.p

    @property
    def grid(self) -> "Grid":
        return Grid(self.dim, self.n_cells)

    def replace(self, **changes) -> "SimParams":
        values = {f.name: getattr(self, f.name) for f in dc_fields(self)}
        values.update(changes)
        return SimParams(**values)


@dataclass(frozen=True)
class Grid:
    """Uniform grid of ``n`` interior nodes per axis on the unit box."""

    dim: int
    n: int

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ParameterError(f"dim = {self.dim} must be 1, 2 or 3")
        if self.n < 3:
            raise ParameterError(f"n = {self.n} must be >= 3")

    @property
    def h(self) -> float:
        return 1.0 / (self.n + 1)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @property
    def volume(self) -> float:
        return 1.0

    @property
    def axis(self) -> np.ndarray:
        """Interior node coordinates along one axis."""
        return self.h * np.arange(1, self.n + 1)

    def coordinates(self) -> list[np.ndarray]:
        """Broadcastable coordinate arrays, one per axis (``indexing='ij'``)."""
        return np.meshgrid(*([self.axis] * self.dim), indexing="ij")

    def zeros(self, time: float | None = None) -> "VectorField":
        return VectorField(self, np.zeros((self.dim,) + self.shape), time)


class VectorField:
    """Nodal values of an R^d-valued field at the interior nodes of ``grid``.

    ``values`` has shape ``(dim,) + grid.shape`` and is stored read-only.
    """

    __slots__ = ("grid", "values", "time")

    def __init__(self, grid: Grid, values, time: float | None = None):
        arr = np.array(values, dtype=float)
        if arr.shape != (grid.dim,) + grid.shape:
            raise ValueError(
                f"field shape {arr.shape} does not match grid {(grid.dim,) + grid.shape}"
            )
        arr.flags.writeable = False
        self.grid = grid
        self.values = arr
        self.time = time

    def __repr__(self):
        return f"VectorField(dim={self.grid.dim}, n={self.grid.n}, time={self.time})"

    @property
    def magnitude(self) -> np.ndarray:
        """Euclidean magnitude at every node."""
        return np.sqrt(np.sum(self.values**2, axis=0))

    def padded(self) -> np.ndarray:
        """Values with the zero boundary layer attached on every spatial axis."""
        pad = [(0, 0)] + [(1, 1)] * self.grid.dim
        return np.pad(self.values, pad)

    def with_values(self, values, time: float | None = None) -> "VectorField":
        return VectorField(self.grid, values, self.time if time is None else time)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def __add__(self, other: "VectorField") -> "VectorField":
        _check_same_grid(self, other)
        return VectorField(self.grid, self.values + other.values, self.time)

    def __sub__(self, other: "VectorField") -> "VectorField":
        _check_same_grid(self, other)
        return VectorField(self.grid, self.values - other.values, self.time)

    def __mul__(self, c: float) -> "VectorField":
        return VectorField(self.grid, c * self.values, self.time)

    __rmul__ = __mul__

    def __neg__(self) -> "VectorField":
        return VectorField(self.grid, -self.values, self.time)


def _check_same_grid(a: VectorField, b: VectorField) -> None:
    if a.grid != b.grid:
        raise ValueError(f"grid mismatch: {a.grid} vs {b.grid}")


def inner(a: VectorField, b: VectorField) -> float:
    """Discrete L^2 pairing ``sum_i a_i . b_i h^d``."""
    _check_same_grid(a, b)
    return float(np.sum(a.values * b.values) * a.grid.cell_volume)


def lp_norm(f: VectorField, q: float) -> float:
    """Discrete L^q norm of the Euclidean magnitude of ``f``.

    ``q = np.inf`` gives the nodal maximum.
    """
    if not q >= 1:
        raise ValueError(f"exponent q = {q} must be >= 1")
    mag = f.magnitude
    if math.isinf(q):
        return float(mag.max()) if mag.size else 0.0
    if q == 2:
        return math.sqrt(float(np.sum(f.values**2)) * f.grid.cell_volume)
    return float(np.sum(mag**q) * f.grid.cell_volume) ** (1.0 / q)


def l1_norm(f: VectorField) -> float:
    return lp_norm(f, 1.0)


def l2_norm(f: VectorField) -> float:
    return lp_norm(f, 2.0)


def linf_norm(f: VectorField) -> float:
    return lp_norm(f, math.inf)


# ---------------------------------------------------------------- initial data


def make_initial(spec: Mapping[str, Any], grid: Grid) -> VectorField:
    """Sample an initial datum at the interior nodes of ``grid``.

    Accepted descriptors (``spec["kind"]``):

    ``"sine"``
        ``modes``: one multi-index per component (or a single multi-index used
        for component 0); ``amplitudes``: one per component.  Component ``i`` is
        ``A_i prod_b sin(k_b pi x_b)``.
    ``"indicator"``
        ``lower``/``upper`` bounds of the sub-box (scalars or per-axis),
        ``amplitudes`` per component (default ``[amplitude, 0, ...]``).
    ``"array"``
        ``values`` of shape ``(dim,) + grid.shape``, copied verbatim.
    ``"random"``
        smooth random sine series up to ``max_mode`` per axis, coefficients
        ``N(0, 1) / |k|^2`` drawn from ``seed``; reproducible.
    ``"zero"``
        the zero field.
    """
    kind = spec.get("kind")
    d = grid.dim
    if kind == "zero":
        return grid.zeros(0.0)
    if kind == "sine":
        modes = np.atleast_2d(np.asarray(spec.get("modes", [[1] * d]), dtype=int))
        amps = _amplitudes(spec, d, len(modes))
        if modes.shape[1] != d:
            raise ValueError(f"sine modes need {d} indices each, got {modes.shape[1]}")
        if len(modes) == 1 and d > 1:
            modes = np.repeat(modes, d, axis=0)
        coords = grid.coordinates()
        vals = np.zeros((d,) + grid.shape)
        for i in range(d):
            if amps[i] == 0.0:
                continue
            comp = np.full(grid.shape, amps[i])
            for b in range(d):
                comp = comp * np.sin(modes[i][b] * np.pi * coords[b])
            vals[i] = comp
        return VectorField(grid, vals, 0.0)
    if kind == "indicator":
        lower = np.broadcast_to(np.asarray(spec.get("lower", 0.25), float), (d,))
        upper = np.broadcast_to(np.asarray(spec.get("upper", 0.75), float), (d,))
        amps = _amplitudes(spec, d, 1)
        inside = np.ones(grid.shape, dtype=bool)
        for b, x in enumerate(grid.coordinates()):
            inside &= (x >= lower[b] - 1e-12) & (x <= upper[b] + 1e-12)
        vals = np.stack([a * inside for a in amps]).astype(float)
        return VectorField(grid, vals, 0.0)
    if kind == "random":
        rng = np.random.default_rng(int(spec.get("seed", 0)))
        kmax = int(spec.get("max_mode", 4))
        if kmax < 1:
            raise ValueError("max_mode must be >= 1")
        coords = grid.coordinates()
        vals = np.zeros((d,) + grid.shape)
        for i in range(d):
            for k in np.ndindex(*([kmax] * d)):
                k = np.asarray(k) + 1
                term = rng.standard_normal() / float(np.sum(k**2))
                for b in range(d):
                    term = term * np.sin(k[b] * np.pi * coords[b])
                vals[i] += term
        return VectorField(grid, vals * float(spec.get("amplitude", 1.0)), 0.0)
    if kind == "array":
        vals = np.asarray(spec["values"], dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ValueError("initial values must be finite")
        return VectorField(grid, vals, 0.0)
    raise ValueError(f"unknown initial-condition kind {kind!r}")


def _amplitudes(spec: Mapping[str, Any], d: int, n_modes: int) -> np.ndarray:
    if "amplitudes" in spec:
        amps = np.asarray(spec["amplitudes"], dtype=float).ravel()
        if amps.size == 1 and d > 1:
            amps = np.concatenate([amps, np.zeros(d - 1)])
    else:
        amps = np.zeros(d)
        amps[0] = float(spec.get("amplitude", 1.0))
    if amps.size != d:
        raise ValueError(f"need {d} amplitudes, got {amps.size}")
    if not np.all(np.isfinite(amps)):
        raise ValueError("amplitudes must be finite")
    return amps


# ---------------------------------------------------------------- trajectories


@dataclass
class Trajectory:
    """Time samples of a run together with their diagnostics.

    ``times[0] == 0`` and ``states[0]`` is the initial datum.  ``status`` is
    ``"ok"``, ``"extinct"`` or ``"aborted"``.
    """

    params: SimParams
    times: list[float] = field(default_factory=list)
    states: list[VectorField] = field(default_factory=list)
    diagnostics: list[Any] = field(default_factory=list)
    status: str = "ok"
    extinction_time: float | None = None
    message: str = ""

    def append(self, t: float, state: VectorField, record=None) -> None:
        if self.times and not t > self.times[-1]:
            raise ValueError(f"times must increase: {t} after {self.times[-1]}")
        self.times.append(float(t))
        self.states.append(state)
        self.diagnostics.append(record)

    def __len__(self):
        return len(self.times)

    @property
    def initial(self) -> VectorField:
        return self.states[0]

    @property
    def final(self) -> VectorField:
        return self.states[-1]

    def state_at(self, t: float, tol: float = 1e-12) -> VectorField:
        """Stored state whose time matches ``t``."""
        times = np.asarray(self.times)
        k = int(np.argmin(np.abs(times - t)))
        if abs(times[k] - t) > tol * max(1.0, abs(t)):
            raise KeyError(f"no snapshot at t = {t}")
        return self.states[k]

    def series(self, name: str) -> np.ndarray:
        """One diagnostics column as an array over snapshots."""
        return np.array([getattr(r, name) for r in self.diagnostics], dtype=float)


def spacetime_l2_distance(a: Trajectory, b: Trajectory) -> float:
    """Discrete L^2(Omega_T) distance between two runs on the same time grid."""
    if len(a) != len(b) or not np.allclose(a.times, b.times):
        raise ValueError("trajectories are not sampled at the same times")
    if len(a) < 2:
        return 0.0
    sq = np.array([l2_norm(x - y) ** 2 for x, y in zip(a.states, b.states)])
    return math.sqrt(float(np.trapezoid(sq, a.times)))


# ------------------------------------------------------------ weighted monitor


def weighted_sup_monitor(traj: Trajectory, alpha: float, p: float) -> tuple[float, bool]:
    """``sup_{t>0} t^(alpha/(4-p)) ||grad u(t)||_2`` over the stored samples.

    Returns the value and a flag that is ``True`` when ``alpha`` lies inside
    the admissible range ``alpha > (4-p)/p``.  Out-of-range values are still
    computed but warned about.
    """
    in_theory = alpha > (4.0 - p) / p
    if not in_theory:
        warnings.warn(
            f"alpha = {alpha} <= (4-p)/p = {(4 - p) / p:.6g}; monitor is outside the theory",
            stacklevel=2,
        )
    expo = alpha / (4.0 - p)
    best = 0.0
    for t, rec, state in zip(traj.times, traj.diagnostics, traj.states):
        if t <= 0:
            continue
        if rec is not None and getattr(rec, "grad_l2", None) is not None:
            g = rec.grad_l2
        else:
            from .operators import grad_l2_norm

            g = grad_l2_norm(state)
        best = max(best, t**expo * g)
    return best, in_theory
