"""Gaussian random-field sampling: SPDE route and truncated KL expansion.

The SPDE route draws w ~ N(0, I), loads it as white noise b = L w with
L L^T = M, and evaluates the sinc-quadrature sum for the half-power
``A^{-alpha/2}`` applied to M^{-1} b, all through one shifted-system solve:

    u = sum_j (w_j / z_j) (M + z_j^{-1} K)^{-1} L w .

The KL route approximates the top eigenpairs of the covariance pencil
``M C psi = lambda M psi`` with a randomized two-pass projection that only
touches C through matrix-vector products.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .covariance import CovarianceApplicator
from .errors import ValidationError
from .grid import Coefficients, Grid, assemble_mass, assemble_stiffness, cholesky_mass
from .randomness import RandomStream
from .shifted import DEFAULT_TAUS, PreconditionerSet, ShiftedFamily, solve_shifted
from .sincquad import rescaled_weights, spde_rule

__all__ = ["RandomStream", "KLBasis", "SpdeSampler", "sample_spde", "kl_eigs", "sample_kl"]


class SpdeSampler:
    """Reusable white-noise sampler for exponents alpha in (0, 2).

    Holds the assembled matrices, mass Cholesky, quadrature rule, and
    preconditioners so repeated draws share the setup cost.
    """

    def __init__(
        self,
        grid: Grid,
        coeff: Coefficients,
        alpha: float,
        taus=DEFAULT_TAUS,
        tol: float = 1e-8,
        max_iter: int = 100,
        zeta: float | None = None,
    ):
        if not 0.0 < alpha < 2.0:
            raise ValidationError(f"SPDE sampler needs alpha in (0,2), got {alpha}")
        coeff.validate_on(grid)
        self.grid = grid
        self.alpha = alpha
        self.tol = tol
        self.max_iter = max_iter
        self.m = assemble_mass(grid)
        self.k = assemble_stiffness(grid, coeff)
        self.rule = spde_rule(alpha, grid.quad_h, zeta=zeta)
        self.chol_m = cholesky_mass(self.m)
        self.precs = PreconditionerSet.build(self.m, self.k, taus)
        self.last_report = None

    def draw(self, stream: RandomStream, noise: np.ndarray | None = None) -> np.ndarray:
        """One field sample; pass ``noise`` to reuse a fixed w across calls."""
        n = self.grid.n_dofs
        w = stream.normal(n) if noise is None else np.asarray(noise, dtype=float).ravel()
        if w.shape[0] != n:
            raise ValidationError(f"noise vector has {w.shape[0]} entries, grid has {n} nodes")
        if not np.any(w):
            return np.zeros(n)
        b = self.chol_m.apply_l(w)
        sigmas, wtilde = rescaled_weights(self.rule)
        family = ShiftedFamily(a1=self.m, a2=self.k, d=b, shifts=sigmas)
        x, report = solve_shifted(family, self.precs, tol=self.tol, max_iter=self.max_iter)
        self.last_report = report
        return x @ wtilde


def sample_spde(
    grid: Grid,
    coeff: Coefficients,
    alpha: float,
    stream: RandomStream,
    noise: np.ndarray | None = None,
    **solver_opts,
) -> np.ndarray:
    """Single SPDE sample; see SpdeSampler for repeated draws."""
    return SpdeSampler(grid, coeff, alpha, **solver_opts).draw(stream, noise=noise)


@dataclass
class KLBasis:
    """Truncated KL modes: descending positive eigenvalues, M-orthonormal vectors."""

    eigenvalues: np.ndarray
    vectors: np.ndarray         # (n_dofs, n_modes)
    grid: Grid
    alpha: float

    @property
    def n_modes(self) -> int:
        return self.eigenvalues.shape[0]

    def truncation_energy(self) -> np.ndarray:
        return np.cumsum(self.eigenvalues)


def kl_eigs(
    app: CovarianceApplicator,
    n_modes: int,
    oversample: int = 20,
    stream: RandomStream | None = None,
    seed: int = 0,
    n_power: int = 1,
) -> KLBasis:
    """Randomized two-pass approximation of the top covariance eigenpairs.

    Sketches the range of C with ``n_modes + oversample`` Gaussian vectors
    (applied ``n_power`` times for slowly decaying spectra), M-orthonormalizes
    the sketch, and solves the small projected pencil in a second pass
    through C.  Eigenvalues come out descending; requesting modes beyond the
    numerically positive spectrum raises.
    """
    if stream is None:
        stream = RandomStream(seed)
    n = app.n_dofs
    n_sketch = n_modes + oversample
    if n_modes < 1:
        raise ValidationError("n_modes must be positive")
    if n_sketch > n:
        raise ValidationError(f"n_modes + oversample = {n_sketch} exceeds {n} dofs")
    if n_power < 1:
        raise ValidationError("n_power must be at least 1")

    y = stream.normal((n, n_sketch))
    for _ in range(n_power):
        y = app.apply_cov_cols(y)

    # M-orthonormal basis of the sketch: Y R^{-1} with R from the M-Gram factor
    gram = y.T @ (app.m @ y)
    gram = 0.5 * (gram + gram.T)
    gl, gv = scipy.linalg.eigh(gram)
    keep = gl > max(gl[-1], 0.0) * 1e-13
    if not np.any(keep):
        raise ValidationError("sketch collapsed; covariance apply returned a rank-0 range")
    qb = y @ (gv[:, keep] / np.sqrt(gl[keep]))

    # second pass: projected pencil T = Qb^T M C Qb
    cq = app.apply_cov_cols(qb)
    t = qb.T @ (app.m @ cq)
    t = 0.5 * (t + t.T)
    theta, s = scipy.linalg.eigh(t)
    order = np.argsort(theta)[::-1]
    theta, s = theta[order], s[:, order]
    if theta.shape[0] < n_modes or theta[n_modes - 1] <= 0:
        raise ValidationError(
            f"only {int(np.sum(theta > 0))} numerically positive eigenvalues available, "
            f"requested {n_modes}"
        )
    vecs = qb @ s[:, :n_modes]
    return KLBasis(eigenvalues=theta[:n_modes], vectors=vecs, grid=app.grid, alpha=app.prior.alpha)


def sample_kl(
    basis: KLBasis,
    mean: np.ndarray | None,
    stream: RandomStream,
    xi: np.ndarray | None = None,
) -> np.ndarray:
    """u = mean + sum_j sqrt(lambda_j) xi_j psi_j with xi ~ N(0, I)."""
    if xi is None:
        xi = stream.normal(basis.n_modes)
    else:
        xi = np.asarray(xi, dtype=float).ravel()
        if xi.shape[0] != basis.n_modes:
            raise ValidationError(f"xi has {xi.shape[0]} entries, basis has {basis.n_modes} modes")
    u = basis.vectors @ (np.sqrt(basis.eigenvalues) * xi)
    if mean is not None:
        u = u + np.asarray(mean, dtype=float).ravel()
    return u
