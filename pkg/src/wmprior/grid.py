"""Structured-grid Q1 finite elements on an axis-aligned rectangle.

Assembles mass and stiffness matrices for the elliptic operator
``kappa^2(x) - div(Theta(x) grad)`` with natural (zero Neumann) boundary
conditions, and provides the sparse SPD factorizations the rest of the
package relies on.  Nodes are ordered lexicographically: node (i, j) has
index ``j*nx + i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import InvalidCoefficientError, InvalidGridError, NotSPDError

__all__ = [
    "Grid",
    "Coefficients",
    "Field",
    "assemble_mass",
    "assemble_stiffness",
    "factorize",
    "cholesky_mass",
    "SuperLUFactorization",
    "BandedCholesky",
    "save_matrix",
    "load_matrix",
]

# 2x2 Gauss rule on [-1,1]^2: exact for every Q1 integrand on affine
# rectangles (degree <= 3 per direction), so constant-coefficient matrices
# are integrated exactly.
_G = 1.0 / math.sqrt(3.0)
_CORNERS = np.array([(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)])
_GPTS = np.array([(-_G, -_G), (_G, -_G), (-_G, _G), (_G, _G)])


@dataclass(frozen=True)
class Grid:
    """Tensor-product node grid on a rectangle (default: unit square)."""

    nx: int
    ny: int
    x0: float = 0.0
    y0: float = 0.0
    lx: float = 1.0
    ly: float = 1.0

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise InvalidGridError(f"grid needs at least 2 points per dimension, got {self.nx}x{self.ny}")
        if self.lx <= 0 or self.ly <= 0:
            raise InvalidGridError("domain edge lengths must be positive")

    @property
    def n_dofs(self) -> int:
        return self.nx * self.ny

    @property
    def dx(self) -> float:
        return self.lx / (self.nx - 1)

    @property
    def dy(self) -> float:
        return self.ly / (self.ny - 1)

    @property
    def quad_h(self) -> float:
        """Mesh parameter used for the quadrature step ``zeta = 1/log(1/h)``.

        This is 1/nx (points per dimension), not the element size; the
        sinc-rule truncation counts are calibrated to this convention.
        """
        return 1.0 / self.nx

    @property
    def area(self) -> float:
        return self.lx * self.ly

    def node_index(self, i, j):
        return j * self.nx + i

    def node_coords(self):
        """Coordinates of all nodes, lexicographic order: (x, y) arrays."""
        x = self.x0 + np.arange(self.nx) * self.dx
        y = self.y0 + np.arange(self.ny) * self.dy
        X, Y = np.meshgrid(x, y)  # rows = j, cols = i
        return X.ravel(), Y.ravel()

    def element_connectivity(self):
        """(n_elements, 4) node indices per element, local order SW,SE,NW,NE."""
        ei, ej = np.meshgrid(np.arange(self.nx - 1), np.arange(self.ny - 1), indexing="ij")
        base = (ej * self.nx + ei).ravel()
        return np.stack([base, base + 1, base + self.nx, base + self.nx + 1], axis=1)


@dataclass(frozen=True)
class Coefficients:
    """Coefficients of ``kappa^2 - div(Theta grad)``.

    kappa2: nonnegative scalar or per-node array (n_dofs,).
    theta:  SPD 2x2 tensor, constant (2, 2) or per-node (n_dofs, 2, 2).
    tau:    noise amplitude; only tau = 1 is supported.
    """

    kappa2: float | np.ndarray = 1.0
    theta: np.ndarray = field(default_factory=lambda: np.eye(2))
    tau: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))
        if np.ndim(self.kappa2) == 0:
            if float(self.kappa2) < 0:
                raise InvalidCoefficientError("kappa2 must be nonnegative")
        else:
            object.__setattr__(self, "kappa2", np.asarray(self.kappa2, dtype=float))
            if np.any(self.kappa2 < 0):
                raise InvalidCoefficientError("kappa2 must be nonnegative everywhere")
        t = self.theta
        if t.shape not in ((2, 2),) and not (t.ndim == 3 and t.shape[1:] == (2, 2)):
            raise InvalidCoefficientError(f"theta must be 2x2 or (n,2,2), got shape {t.shape}")
        t12 = t[..., 0, 1]
        if not np.array_equal(t12, t[..., 1, 0]):
            raise InvalidCoefficientError("theta must be exactly symmetric (theta12 == theta21)")
        det = t[..., 0, 0] * t[..., 1, 1] - t12 * t12
        if np.any(t[..., 0, 0] <= 0) or np.any(det <= 0):
            raise InvalidCoefficientError("theta must be positive definite at every node")
        if self.tau != 1.0:
            raise InvalidCoefficientError("tau is fixed to 1")

    def validate_on(self, grid: Grid):
        n = grid.n_dofs
        if np.ndim(self.kappa2) == 1 and self.kappa2.shape != (n,):
            raise InvalidCoefficientError(f"kappa2 field has {self.kappa2.shape[0]} values, grid has {n} nodes")
        if self.theta.ndim == 3 and self.theta.shape[0] != n:
            raise InvalidCoefficientError(f"theta field has {self.theta.shape[0]} values, grid has {n} nodes")


def anisotropy_tensor(l1sq: float, l2sq: float, angle: float) -> np.ndarray:
    """Rotated diagonal tensor R(angle) diag(l1sq, l2sq) R(angle)^T."""
    c, s = math.cos(angle), math.sin(angle)
    r = np.array([[c, s], [-s, c]])
    t = r @ np.diag([float(l1sq), float(l2sq)]) @ r.T
    t[0, 1] = t[1, 0] = 0.5 * (t[0, 1] + t[1, 0])
    return t


@dataclass
class Field:
    """Nodal coefficient vector together with its grid."""

    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.shape[0] != self.grid.n_dofs:
            raise InvalidGridError(
                f"field has {self.values.shape[0]} values, grid has {self.grid.n_dofs} nodes"
            )

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "Field":
        x, y = grid.node_coords()
        return cls(fn(x, y), grid)

    def reshape(self):
        """(ny, nx) view, row j = constant-y line."""
        return self.values.reshape(self.grid.ny, self.grid.nx)


def _shape_tables(grid: Grid):
    """Q1 shape values/physical gradients at the 2x2 Gauss points."""
    n = 0.25 * (1 + _CORNERS[None, :, 0] * _GPTS[:, None, 0]) * (1 + _CORNERS[None, :, 1] * _GPTS[:, None, 1])
    dndx = 0.25 * _CORNERS[None, :, 0] * (1 + _CORNERS[None, :, 1] * _GPTS[:, None, 1]) * (2.0 / grid.dx)
    dndy = 0.25 * _CORNERS[None, :, 1] * (1 + _CORNERS[None, :, 0] * _GPTS[:, None, 0]) * (2.0 / grid.dy)
    detjw = grid.dx * grid.dy / 4.0  # unit Gauss weights
    return n, dndx, dndy, detjw


def _scatter(grid: Grid, conn, el):
    """Sum per-element 4x4 blocks into a CSR matrix, symmetrized exactly."""
    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    a = sp.coo_matrix((el.ravel(), (rows, cols)), shape=(grid.n_dofs, grid.n_dofs)).tocsr()
    a = (a + a.T) * 0.5
    a.sort_indices()
    return a


def assemble_mass(grid: Grid) -> sp.csr_matrix:
    """Q1 mass matrix M_ij = int phi_i phi_j dx (exact integration)."""
    n, _, _, detjw = _shape_tables(grid)
    conn = grid.element_connectivity()
    m_el = detjw * np.einsum("ga,gb->ab", n, n)
    el = np.broadcast_to(m_el, (conn.shape[0], 4, 4))
    return _scatter(grid, conn, el)


def assemble_stiffness(grid: Grid, coeff: Coefficients) -> sp.csr_matrix:
    """Stiffness K_ij = int (Theta grad phi_i).grad phi_j + kappa^2 phi_i phi_j dx.

    Spatially varying coefficients are bilinearly interpolated from nodal
    values to the Gauss points; constant coefficients are integrated exactly.
    Zero Neumann conditions are natural, so no rows are modified.
    """
    coeff.validate_on(grid)
    n, dndx, dndy, detjw = _shape_tables(grid)
    conn = grid.element_connectivity()
    ne = conn.shape[0]
    grad = np.stack([dndx, dndy], axis=-1)  # (g, a, 2)

    const_theta = coeff.theta.ndim == 2
    const_kappa = np.ndim(coeff.kappa2) == 0

    if const_theta and const_kappa:
        k_el = detjw * (
            np.einsum("gai,ij,gbj->ab", grad, coeff.theta, grad)
            + float(coeff.kappa2) * np.einsum("ga,gb->ab", n, n)
        )
        k_el = 0.5 * (k_el + k_el.T)
        el = np.broadcast_to(k_el, (ne, 4, 4))
        return _scatter(grid, conn, el)

    if const_theta:
        diff = np.einsum("gai,ij,gbj->ab", grad, coeff.theta, grad)[None]
    else:
        theta_g = np.einsum("ga,eaij->egij", n, coeff.theta[conn])
        diff = np.einsum("gai,egij,gbj->eab", grad, theta_g, grad)
    if const_kappa:
        mass = float(coeff.kappa2) * np.einsum("ga,gb->ab", n, n)[None]
    else:
        kap_g = np.einsum("ga,ea->eg", n, coeff.kappa2[conn])
        mass = np.einsum("eg,ga,gb->eab", kap_g, n, n)
    el = detjw * (diff + mass)
    el = 0.5 * (el + el.transpose(0, 2, 1))
    return _scatter(grid, conn, el)


class SuperLUFactorization:
    """Sparse SPD factorization backed by SuperLU in symmetric mode.

    No numerical row pivoting is performed (diag_pivot_thresh = 0), so the
    U diagonal carries the elimination pivots: any non-positive pivot means
    the matrix is not positive definite.  ``solve`` applies one step of
    iterative refinement when needed to hold the 1e-12 residual contract.
    """

    def __init__(self, a: sp.spmatrix, tag: str = "", pivot_rtol: float = 1e-12):
        a = sp.csc_matrix(a)
        if a.shape[0] != a.shape[1]:
            raise InvalidCoefficientError("factorize needs a square matrix")
        self.tag = tag
        self._a = a
        try:
            self._lu = splu(
                a,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options=dict(SymmetricMode=True),
            )
        except RuntimeError as exc:  # SuperLU reports exact singularity
            raise NotSPDError(f"matrix {tag or a.shape} is singular: {exc}") from exc
        d = self._lu.U.diagonal()
        bad = np.where(d <= pivot_rtol * d.max())[0]
        if bad.size:
            raise NotSPDError(
                f"matrix {tag or a.shape} is not positive definite "
                f"(pivot {d[bad[0]]:.3e} at elimination index {bad[0]})",
                pivot_index=int(bad[0]),
            )

    @property
    def shape(self):
        return self._a.shape

    def solve(self, b: np.ndarray) -> np.ndarray:
        x = self._lu.solve(np.asarray(b, dtype=float))
        r = b - self._a @ x
        # one refinement step if roundoff accumulated beyond the contract
        bnorm = np.linalg.norm(b)
        if bnorm > 0 and np.linalg.norm(r) > 1e-13 * bnorm:
            x = x + self._lu.solve(r)
        return x


class BandedCholesky:
    """Cholesky factorization of a banded SPD matrix with access to L.

    Stores the lower factor in LAPACK band form; ``apply_l`` computes
    ``L w``, which is what white-noise loading needs.
    """

    def __init__(self, a: sp.spmatrix, tag: str = "", pivot_rtol: float = 1e-12):
        a = sp.csr_matrix(a)
        n = a.shape[0]
        coo = a.tocoo()
        bw = int(np.max(np.abs(coo.row - coo.col))) if coo.nnz else 0
        ab = np.zeros((bw + 1, n))
        low = coo.row >= coo.col
        ab[coo.row[low] - coo.col[low], coo.col[low]] = coo.data[low]
        self.tag = tag
        self._a = a
        self._n = n
        self._bw = bw
        try:
            self._cb = scipy.linalg.cholesky_banded(ab, lower=True)
        except scipy.linalg.LinAlgError as exc:
            idx = _pbtrf_index(str(exc))
            raise NotSPDError(f"matrix {tag or a.shape} is not positive definite: {exc}", pivot_index=idx) from exc
        d = self._cb[0]
        bad = np.where(d <= math.sqrt(pivot_rtol) * d.max())[0]
        if bad.size:
            raise NotSPDError(
                f"matrix {tag or a.shape} is numerically singular (pivot index {bad[0]})",
                pivot_index=int(bad[0]),
            )

    @property
    def shape(self):
        return self._a.shape

    def solve(self, b: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve_banded((self._cb, True), np.asarray(b, dtype=float))

    def apply_l(self, w: np.ndarray) -> np.ndarray:
        """Lower Cholesky factor times a vector (or columns of a matrix)."""
        w = np.asarray(w, dtype=float)
        out = self._cb[0][(slice(None),) + (None,) * (w.ndim - 1)] * w
        for k in range(1, self._bw + 1):
            out[k:] += self._cb[k, : self._n - k][(slice(None),) + (None,) * (w.ndim - 1)] * w[: self._n - k]
        return out

    def l_matrix(self) -> sp.csr_matrix:
        """Lower factor as a sparse matrix (for tests and diagnostics)."""
        diags = [self._cb[k, : self._n - k] for k in range(self._bw + 1)]
        return sp.diags(diags, offsets=[-k for k in range(self._bw + 1)], format="csr")


def _pbtrf_index(msg: str):
    # LAPACK message looks like "%d-th leading minor of the array is not positive definite"
    head = msg.split("-", 1)[0]
    return int(head) - 1 if head.isdigit() else None


def factorize(a: sp.spmatrix, tag: str = "") -> SuperLUFactorization:
    """Factorize a sparse SPD matrix for repeated solves."""
    return SuperLUFactorization(a, tag=tag)


def cholesky_mass(m: sp.spmatrix, tag: str = "M") -> BandedCholesky:
    """Cholesky factorization of the (banded) mass matrix, exposing L."""
    return BandedCholesky(m, tag=tag)


def save_matrix(path, a: sp.spmatrix, comment: str = ""):
    """Export in Matrix Market coordinate format, 17 significant digits."""
    scipy.io.mmwrite(path, sp.coo_matrix(a), comment=comment, precision=17)


def load_matrix(path) -> sp.csr_matrix:
    a = scipy.io.mmread(path).tocsr()
    a.sort_indices()
    return a
