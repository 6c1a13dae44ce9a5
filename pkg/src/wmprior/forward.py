"""Linear forward operators and synthetic data generation.

Two measurement models: straight-ray tomography with exact pixel-chord
weights, and terminal observation of a Crank-Nicolson heat solve.  Both
expose exact discrete adjoints, which the inversion machinery requires.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError
from .grid import Coefficients, Grid, assemble_mass, assemble_stiffness, factorize
from .randomness import RandomStream

__all__ = [
    "LinearForward",
    "NoiseModel",
    "ray_matrix",
    "tomo_operator",
    "heat_operator",
    "make_data",
]


class LinearForward:
    """Linear map from nodal fields to a data vector, with exact transpose."""

    def __init__(self, apply_fn, apply_transpose_fn, n_data, n_dofs, description="", matrix=None):
        self._apply = apply_fn
        self._apply_t = apply_transpose_fn
        self.n_data = n_data
        self.n_dofs = n_dofs
        self.description = description
        self.matrix = matrix  # sparse matrix when the operator is assembled

    @property
    def shape(self):
        return (self.n_data, self.n_dofs)

    def apply(self, m: np.ndarray) -> np.ndarray:
        m = np.asarray(m, dtype=float).ravel()
        if m.shape[0] != self.n_dofs:
            raise ValidationError(f"field has {m.shape[0]} entries, operator expects {self.n_dofs}")
        return self._apply(m)

    def apply_transpose(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float).ravel()
        if y.shape[0] != self.n_data:
            raise ValidationError(f"data has {y.shape[0]} entries, operator expects {self.n_data}")
        return self._apply_t(y)

    @classmethod
    def from_matrix(cls, a: sp.spmatrix, description="") -> "LinearForward":
        a = sp.csr_matrix(a)
        at = sp.csr_matrix(a.T)
        return cls(lambda m: a @ m, lambda y: at @ y, a.shape[0], a.shape[1],
                   description=description, matrix=a)


@dataclass
class NoiseModel:
    """Diagonal Gaussian noise: per-measurement variances and the stated level."""

    variances: np.ndarray
    noise_level: float

    def __post_init__(self):
        self.variances = np.atleast_1d(np.asarray(self.variances, dtype=float))
        if np.any(self.variances <= 0):
            raise ValidationError("noise variances must be positive")

    def weight(self, r: np.ndarray) -> np.ndarray:
        """Gamma^{-1} r."""
        return r / self.variances

    def norm(self, r: np.ndarray) -> float:
        """|| r ||_{Gamma^{-1}}."""
        return float(np.sqrt(np.sum(r * r / self.variances)))


def ray_matrix(rays, n_px: int, n_py: int, x0=0.0, y0=0.0, lx=1.0, ly=1.0) -> sp.csr_matrix:
    """Exact pixel-intersection lengths for straight rays on an n_px x n_py raster.

    ``rays`` is an iterable of ((xs, ys), (xe, ye)) segment endpoints.  Each
    row holds the chord length of that ray through each pixel it crosses, so
    row sums equal total intersection lengths.  Rays that miss the domain
    produce zero rows and a warning.
    """
    rays = list(rays)
    if not rays:
        raise ValidationError("need at least one ray")
    px, py = lx / n_px, ly / n_py
    rows, cols, vals = [], [], []
    n_zero = 0
    for ri, ((xs, ys), (xe, ye)) in enumerate(rays):
        dx, dy = xe - xs, ye - ys
        length = np.hypot(dx, dy)
        if length == 0:
            n_zero += 1
            continue
        # entry/exit parameters of the segment against the domain slab
        t0, t1 = 0.0, 1.0
        for p0, d, lo, hi in ((xs, dx, x0, x0 + lx), (ys, dy, y0, y0 + ly)):
            if d == 0.0:
                if not lo <= p0 <= hi:
                    t0, t1 = 1.0, 0.0
                    break
            else:
                ta, tb = (lo - p0) / d, (hi - p0) / d
                if ta > tb:
                    ta, tb = tb, ta
                t0, t1 = max(t0, ta), min(t1, tb)
        if t1 <= t0:
            n_zero += 1
            continue
        # crossing parameters with all pixel grid lines inside [t0, t1]
        ts = [np.array([t0, t1])]
        if dx != 0.0:
            ax = (x0 + np.arange(n_px + 1) * px - xs) / dx
            ts.append(ax[(ax > t0) & (ax < t1)])
        if dy != 0.0:
            ay = (y0 + np.arange(n_py + 1) * py - ys) / dy
            ts.append(ay[(ay > t0) & (ay < t1)])
        t = np.unique(np.concatenate(ts))
        mid = 0.5 * (t[:-1] + t[1:])
        seg = (t[1:] - t[:-1]) * length
        ix = np.clip(((xs + mid * dx - x0) / px).astype(int), 0, n_px - 1)
        iy = np.clip(((ys + mid * dy - y0) / py).astype(int), 0, n_py - 1)
        keep = seg > 0
        rows.append(np.full(int(keep.sum()), ri))
        cols.append((iy * n_px + ix)[keep])
        vals.append(seg[keep])
    if n_zero:
        warnings.warn(f"{n_zero} rays miss the domain and produce zero measurement rows")
    if rows:
        rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    else:
        rows = cols = vals = np.empty(0)
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(rays), n_px * n_py))


def tomo_operator(grid: Grid, n_sources: int, n_receivers: int, geometry: str = "cross-well") -> LinearForward:
    """Straight-ray tomography on the grid's nx x ny pixelization.

    cross-well: sources spread along the left edge, receivers along the
    right edge, one ray per pair (n_sources * n_receivers measurements).
    parallel: n_sources view angles in [0, pi), n_receivers offset rays per
    angle spanning the domain diagonal.
    """
    if n_sources < 1 or n_receivers < 1:
        raise ValidationError("need at least one source and one receiver")
    g = grid
    rays = []
    if geometry == "cross-well":
        ys = g.y0 + (np.arange(n_sources) + 0.5) * g.ly / n_sources
        yr = g.y0 + (np.arange(n_receivers) + 0.5) * g.ly / n_receivers
        for s in ys:
            for r in yr:
                rays.append(((g.x0, s), (g.x0 + g.lx, r)))
    elif geometry == "parallel":
        cx, cy = g.x0 + g.lx / 2.0, g.y0 + g.ly / 2.0
        half = np.hypot(g.lx, g.ly) / 2.0
        offs = (np.arange(n_receivers) + 0.5) / n_receivers * 2.0 - 1.0
        for a in np.arange(n_sources) * np.pi / n_sources:
            d = np.array([np.cos(a), np.sin(a)])
            nrm = np.array([-np.sin(a), np.cos(a)])
            for o in offs:
                c = np.array([cx, cy]) + o * half * nrm
                rays.append((tuple(c - half * 1.5 * d), tuple(c + half * 1.5 * d)))
    else:
        raise ValidationError(f"unknown tomography geometry {geometry!r}")
    a = ray_matrix(rays, g.nx, g.ny, g.x0, g.y0, g.lx, g.ly)
    return LinearForward.from_matrix(a, description=f"{geometry} tomography {len(rays)}x{g.n_dofs}")


def sensor_nodes(grid: Grid, stride: int = 4, margin: int = 2):
    """Uniform interior sensor subgrid: every ``stride``-th node per axis."""
    ii = np.arange(margin, grid.nx - 1, stride)
    jj = np.arange(margin, grid.ny - 1, stride)
    gi, gj = np.meshgrid(ii, jj)
    return (gj * grid.nx + gi).ravel()


def heat_operator(grid: Grid, t_final: float, n_steps: int, sensor_stride: int = 4):
    """Terminal-observation map of the Neumann heat equation, plus sensor mask.

    Crank-Nicolson steps of M du/dt = -K0 u (K0: kappa2 = 0, Theta = I), then
    samples u(T) at a uniform interior sensor subgrid.  The transpose runs
    the same factorization backwards, so the adjoint is exact in floating
    point.  Matrix-free; returns (operator, sensor_index_array).
    """
    if t_final <= 0 or n_steps < 1:
        raise ValidationError("need t_final > 0 and n_steps >= 1")
    m = assemble_mass(grid)
    k0 = assemble_stiffness(grid, Coefficients(kappa2=0.0))
    dt = t_final / n_steps
    a_plus = factorize(m + (dt / 2.0) * k0, tag="M+dt/2*K0")
    a_minus = (m - (dt / 2.0) * k0).tocsr()
    sensors = sensor_nodes(grid, stride=sensor_stride)

    def apply_fn(mvec):
        u = mvec
        for _ in range(n_steps):
            u = a_plus.solve(a_minus @ u)
        return u[sensors]

    def apply_t_fn(y):
        w = np.zeros(grid.n_dofs)
        w[sensors] = y
        for _ in range(n_steps):
            w = a_minus @ a_plus.solve(w)
        return w

    op = LinearForward(apply_fn, apply_t_fn, len(sensors), grid.n_dofs,
                       description=f"heat terminal observation T={t_final} steps={n_steps}")
    return op, sensors


def make_data(f: LinearForward, m_true: np.ndarray, noise_level: float, stream: RandomStream):
    """y = F m_true + eta with per-component std noise_level*||F m_true||/sqrt(N_y).

    The scaling makes E||eta|| approximately noise_level * ||F m_true||, the
    usual "x% Gaussian noise" convention.  noise_level = 0 returns exact
    data with unit noise variances (weighting stays well defined).
    """
    if noise_level < 0:
        raise ValidationError("noise_level must be nonnegative")
    clean = f.apply(m_true)
    if noise_level == 0.0:
        return clean, NoiseModel(np.ones(f.n_data), 0.0)
    std = noise_level * np.linalg.norm(clean) / np.sqrt(f.n_data)
    y = clean + std * stream.normal(f.n_data)
    return y, NoiseModel(np.full(f.n_data, std ** 2), noise_level)
