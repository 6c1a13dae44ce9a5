"""Multipreconditioned GMRES for families of shifted linear systems.

Solves ``(A1 + sigma_j A2) x_j = d`` for many shifts at once over a single
search space.  Each iteration applies every shift-and-invert preconditioner
``P_i = A1 + tau_i A2`` to the newest orthonormal basis vector, so the basis
grows by n_p columns per iteration.  Writing ``P_i^{-1} v`` as a search
direction z gives ``A1 z = v - tau_i A2 z``, hence the per-shift relation

    (A1 + sigma A2) Z_m = V_{m+1} ( [E_m; 0] + Hbar_m (sigma I - T_m) )

with E_m mapping each direction to its source basis column, T_m holding its
tau, and Hbar_m the orthogonalization coefficients of A2 Z_m.  All shifted
systems share V and Z; only the small projected least-squares problems
depend on sigma.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import BreakdownError, NotSPDError, PartialConvergenceError
from .grid import factorize

__all__ = [
    "DEFAULT_TAUS",
    "ShiftedFamily",
    "PreconditionerSet",
    "MPArnoldiState",
    "ShiftedReport",
    "solve_shifted",
    "direct_shifted",
    "residual_history",
]

DEFAULT_TAUS = (1e-8, 1e-4, 1e-2)
DEFLATION_RTOL = 1e-12


@dataclass
class ShiftedFamily:
    """The systems (A1 + sigma_j A2) x_j = d."""

    a1: sp.spmatrix
    a2: sp.spmatrix
    d: np.ndarray
    shifts: np.ndarray

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=float).ravel()
        self.shifts = np.atleast_1d(np.asarray(self.shifts, dtype=float))
        n = self.d.shape[0]
        if self.a1.shape != (n, n) or self.a2.shape != (n, n):
            raise ValueError("a1, a2 must be square and match the right-hand side")
        if not np.all(np.isfinite(self.shifts)):
            raise ValueError("shifts must be finite")


class PreconditionerSet:
    """Factorizations of P_i = A1 + tau_i A2 for a list of taus."""

    def __init__(self, taus, factors):
        self.taus = np.asarray(taus, dtype=float)
        self.factors = list(factors)
        if self.taus.size == 0:
            raise ValueError("need at least one preconditioner shift")

    @classmethod
    def build(cls, a1, a2, taus=DEFAULT_TAUS) -> "PreconditionerSet":
        facs = [factorize(a1 + t * a2, tag=f"A1+{t:g}*A2") for t in taus]
        return cls(taus, facs)

    @property
    def n_p(self) -> int:
        return len(self.factors)


@dataclass
class MPArnoldiState:
    """Search basis and projected-problem bookkeeping after the final iteration."""

    v: np.ndarray          # (n, n_v) orthonormal basis
    z: np.ndarray          # (n, n_z) preconditioned directions
    h: np.ndarray          # (n_v, n_z) coefficients of A2 Z in the basis
    src: np.ndarray        # source basis column per direction
    taus: np.ndarray       # tau per direction
    iterations: int

    @property
    def e(self) -> np.ndarray:
        m = np.zeros((self.v.shape[1], self.z.shape[1]))
        m[self.src, np.arange(self.z.shape[1])] = 1.0
        return m

    @property
    def t(self) -> np.ndarray:
        return np.diag(self.taus)

    def h_of_shift(self, sigma: float) -> np.ndarray:
        """[E; 0] + Hbar (sigma I - T) for one shift."""
        return self.e + self.h * (sigma - self.taus)[None, :]


@dataclass
class ShiftedReport:
    iterations: int
    basis_dim: int
    residuals: np.ndarray
    converged: bool
    n_deflated: int = 0
    history: list = field(default_factory=list)
    true_residual_spotcheck: dict = field(default_factory=dict)
    state: MPArnoldiState | None = None
    t_solve: float = 0.0


def _projected_lstsq(hs_all, g, beta):
    """Per-shift least squares; robust to rank-deficient/wide matrices."""
    n_sig = hs_all.shape[0]
    y = np.empty((n_sig, hs_all.shape[2]))
    rel = np.empty(n_sig)
    for i in range(n_sig):
        yi, _, _, _ = np.linalg.lstsq(hs_all[i], g, rcond=None)
        y[i] = yi
        rel[i] = np.linalg.norm(g - hs_all[i] @ yi) / beta
    return y, rel


def solve_shifted(
    family: ShiftedFamily,
    precs: PreconditionerSet | None = None,
    tol: float = 1e-8,
    max_iter: int = 100,
    keep_history: bool = False,
    return_state: bool = False,
):
    """Solve all shifted systems to relative residual ``tol``.

    Returns ``(x, report)`` where x has one column per shift.  Raises
    PartialConvergenceError when max_iter is exhausted with unconverged
    shifts and BreakdownError when the basis stagnates before convergence.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    if precs is None:
        precs = PreconditionerSet.build(family.a1, family.a2)
    a1, a2, d = family.a1, family.a2, family.d
    sigmas = family.shifts
    n, n_p, n_sig = d.shape[0], precs.n_p, sigmas.shape[0]

    beta = np.linalg.norm(d)
    if beta == 0.0:
        x = np.zeros((n, n_sig))
        return x, ShiftedReport(0, 0, np.zeros(n_sig), True)

    t_start = time.perf_counter()
    cap = min(1 + n_p * max_iter, n)
    v = np.empty((n, min(cap, 1 + 8 * n_p)))
    v[:, 0] = d / beta
    n_v = 1
    z_cols, h_cols, src, tau_of = [], [], [], []
    history = []
    n_deflated = 0
    any_deflation = False
    y = relres = None
    it = 0

    for it in range(1, max_iter + 1):
        src_k = n_v - 1
        vhat = v[:, src_k]
        z_new = np.stack([f.solve(vhat) for f in precs.factors], axis=1)
        w_block = a2 @ z_new
        block_scale = np.linalg.norm(w_block)
        added = 0
        for c in range(n_p):
            w = w_block[:, c].copy()
            hcol = np.zeros(cap)
            for _ in range(2):  # MGS with one reorthogonalization pass
                coef = v[:, :n_v].T @ w
                w -= v[:, :n_v] @ coef
                hcol[:n_v] += coef
            nrm = np.linalg.norm(w)
            z_cols.append(z_new[:, c])
            src.append(src_k)
            tau_of.append(precs.taus[c])
            if nrm <= DEFLATION_RTOL * block_scale or n_v >= n:
                n_deflated += 1
                any_deflation = True
                h_cols.append(hcol)  # image already lies in the basis
                continue
            if n_v == v.shape[1]:
                v = np.concatenate([v, np.empty((n, min(v.shape[1], cap - n_v)))], axis=1)
            v[:, n_v] = w / nrm
            hcol[n_v] = nrm
            n_v += 1
            h_cols.append(hcol)
            added += 1

        n_z = len(h_cols)
        h = np.stack([hc[:n_v] for hc in h_cols], axis=1)
        e = np.zeros((n_v, n_z))
        e[np.array(src), np.arange(n_z)] = 1.0
        taus_arr = np.array(tau_of)
        hs_all = e[None] + (sigmas[:, None, None] - taus_arr[None, None, :]) * h[None]
        g = np.zeros(n_v)
        g[0] = beta
        if not any_deflation:
            q, r = np.linalg.qr(hs_all)
            c_all = q[:, 0, :] * beta  # Q^T (beta e1)
            y = np.linalg.solve(r, c_all[..., None])
            relres = np.linalg.norm(g[None, :, None] - hs_all @ y, axis=(1, 2)) / beta
            y = y[..., 0]
        else:
            y, relres = _projected_lstsq(hs_all, g, beta)
        if keep_history:
            history.append(relres.copy())
        if relres.max() <= tol:
            break
        if added == 0:
            x = np.stack(z_cols, axis=1) @ y.T
            raise BreakdownError(
                f"search space stagnated at iteration {it} with worst relative residual {relres.max():.3e}"
            )

    z = np.stack(z_cols, axis=1)
    x = z @ y.T
    t_solve = time.perf_counter() - t_start

    spot = {}
    for i in np.unique([0, n_sig // 2, n_sig - 1]):
        ri = d - (a1 @ x[:, i] + sigmas[i] * (a2 @ x[:, i]))
        spot[int(i)] = float(np.linalg.norm(ri) / beta)

    state = None
    if return_state:
        state = MPArnoldiState(
            v=v[:, :n_v].copy(), z=z, h=h, src=np.array(src), taus=taus_arr, iterations=it
        )
    report = ShiftedReport(
        iterations=it,
        basis_dim=n_v,
        residuals=relres,
        converged=bool(relres.max() <= tol),
        n_deflated=n_deflated,
        history=history,
        true_residual_spotcheck=spot,
        state=state,
        t_solve=t_solve,
    )
    if not report.converged:
        raise PartialConvergenceError(
            f"{int(np.sum(relres > tol))}/{n_sig} shifted systems unconverged after "
            f"{it} iterations (worst relative residual {relres.max():.3e})",
            worst_residual=float(relres.max()),
            residuals=relres,
        )
    return x, report


def direct_shifted(family: ShiftedFamily) -> np.ndarray:
    """Factorize and solve each shifted system individually (oracle/baseline)."""
    n = family.d.shape[0]
    x = np.empty((n, family.shifts.shape[0]))
    for j, sigma in enumerate(family.shifts):
        try:
            f = factorize(family.a1 + sigma * family.a2, tag=f"shift[{j}]={sigma:g}")
        except NotSPDError as exc:
            raise NotSPDError(f"shifted matrix {j} (sigma={sigma:g}) is not SPD: {exc}",
                              pivot_index=exc.pivot_index) from exc
        x[:, j] = f.solve(family.d)
    return x


def residual_history(report: ShiftedReport) -> np.ndarray:
    """(iterations, n_shifts) relative residuals; needs keep_history=True."""
    if not report.history:
        raise ValueError("solve was run without keep_history=True")
    return np.vstack(report.history)
