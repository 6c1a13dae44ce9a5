"""Application of the fractional prior covariance.

The discretized covariance with exponent alpha = r + s, s in (0,1), is

    C_alpha = ( sum_j w_j (K + z_j M)^{-1} M ) [K^{-1} M]^r,

which equals (M^{-1}K)^{-alpha}.  The integer part is r direct solves with
K; the fractional sum becomes one family of shifted systems
``(M + z_j^{-1} K) x_j = M c`` with weights w_j/z_j, solved over a shared
multipreconditioned basis.  Q = C_alpha M^{-1} is the Euclidean-symmetric
form used by the inversion machinery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ValidationError
from .grid import Coefficients, Grid, assemble_mass, assemble_stiffness, factorize
from .randomness import RandomStream
from .shifted import DEFAULT_TAUS, PreconditionerSet, ShiftedFamily, solve_shifted
from .sincquad import inverse_rule, rescaled_weights

__all__ = [
    "PriorConfig",
    "CovarianceApplicator",
    "DenseCovariance",
    "dense_cov",
    "estimate_diag",
    "estimate_diag_q",
]

DENSE_DOF_LIMIT = 1200


@dataclass(frozen=True)
class PriorConfig:
    """Whittle-Matern prior: exponent, coefficients, regularization, mean.

    ``lambda_c`` is the regularization scalar; None means "estimate from
    data" (projected GCV during inversion).  ``mean`` is a nodal vector or
    None for the zero mean.
    """

    alpha: float
    kappa2: float | np.ndarray = 100.0
    theta: np.ndarray = field(default_factory=lambda: np.eye(2))
    lambda_c: float | None = None
    mean: np.ndarray | None = None

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValidationError(f"alpha must be positive, got {self.alpha}")
        if self.lambda_c is not None and self.lambda_c <= 0:
            raise ValidationError("lambda_c must be positive")

    @property
    def r(self) -> int:
        return int(math.floor(self.alpha))

    @property
    def s(self) -> float:
        return self.alpha - self.r

    @property
    def nu(self) -> float:
        """Smoothness parameter nu = alpha - d/2 (d = 2)."""
        return self.alpha - 1.0

    @property
    def marginal_variance(self) -> float | None:
        """Free-space marginal variance Gamma(nu) / ((4 pi)^{d/2} Gamma(nu + d/2)).

        Informational only; with d = 2 and Gamma(nu+1) = nu Gamma(nu) this is
        1 / (4 pi nu).  None when nu <= 0 (not trace class).
        """
        if self.nu <= 0:
            return None
        return 1.0 / (4.0 * math.pi * self.nu)

    def coefficients(self) -> Coefficients:
        return Coefficients(kappa2=self.kappa2, theta=self.theta)

    def require_trace_class(self):
        """Priors on 2-D domains need alpha > d/2 = 1."""
        if self.alpha <= 1.0:
            raise ValidationError(f"prior exponent alpha must exceed 1 (d/2), got {self.alpha}")


class CovarianceApplicator:
    """Matrix-free application of C_alpha and Q = C_alpha M^{-1}.

    Immutable after construction apart from ``last_report``; each apply owns
    its solver workspace, so concurrent calls are safe.
    """

    def __init__(
        self,
        grid: Grid,
        prior: PriorConfig,
        taus=DEFAULT_TAUS,
        tol: float = 1e-8,
        max_iter: int = 100,
        zeta: float | None = None,
    ):
        self.grid = grid
        self.prior = prior
        self.tol = tol
        self.max_iter = max_iter
        coeff = prior.coefficients()
        coeff.validate_on(grid)
        self.m = assemble_mass(grid)
        self.k = assemble_stiffness(grid, coeff)
        self.rule = inverse_rule(prior.s, grid.quad_h, zeta=zeta) if prior.s > 0.0 else None
        self._k_fac = factorize(self.k, tag="K") if prior.r >= 1 else None
        self._m_fac = None
        self.precs = PreconditionerSet.build(self.m, self.k, taus) if prior.s > 0.0 else None
        self.last_report = None

    @property
    def n_dofs(self) -> int:
        return self.grid.n_dofs

    def _mass_fac(self):
        if self._m_fac is None:
            self._m_fac = factorize(self.m, tag="M")
        return self._m_fac

    def apply_integer(self, f: np.ndarray) -> np.ndarray:
        """[K^{-1} M]^r f (identity when alpha < 1)."""
        c = np.asarray(f, dtype=float)
        for _ in range(self.prior.r):
            c = self._k_fac.solve(self.m @ c)
        return c

    def apply_fractional(self, f: np.ndarray) -> np.ndarray:
        """sum_j w_j (K + z_j M)^{-1} M f via the shifted solver."""
        sigmas, wtilde = rescaled_weights(self.rule)
        family = ShiftedFamily(a1=self.m, a2=self.k, d=self.m @ f, shifts=sigmas)
        x, report = solve_shifted(family, self.precs, tol=self.tol, max_iter=self.max_iter)
        self.last_report = report
        return x @ wtilde

    def apply_cov(self, f: np.ndarray) -> np.ndarray:
        """u = C_alpha f."""
        f = np.asarray(f, dtype=float).ravel()
        if f.shape[0] != self.n_dofs:
            raise ValidationError(f"vector has {f.shape[0]} entries, grid has {self.n_dofs} nodes")
        c = self.apply_integer(f)
        if self.rule is None:
            return c
        return self.apply_fractional(c)

    def apply_q(self, v: np.ndarray) -> np.ndarray:
        """Q v = C_alpha M^{-1} v (symmetric positive definite in R^n)."""
        return self.apply_cov(self._mass_fac().solve(np.asarray(v, dtype=float).ravel()))

    def apply_cov_cols(self, f_cols: np.ndarray) -> np.ndarray:
        return np.stack([self.apply_cov(f_cols[:, i]) for i in range(f_cols.shape[1])], axis=1)

    def apply_q_cols(self, v_cols: np.ndarray) -> np.ndarray:
        return np.stack([self.apply_q(v_cols[:, i]) for i in range(v_cols.shape[1])], axis=1)


@dataclass
class DenseCovariance:
    """Dense oracle for small grids: C, Q, and the pencil eigendecomposition."""

    c: np.ndarray
    q: np.ndarray
    pencil_eigenvalues: np.ndarray   # ascending eigenvalues of K psi = lambda M psi
    eigenvectors: np.ndarray         # M-orthonormal columns
    m: np.ndarray
    k: np.ndarray

    @property
    def cov_eigenvalues(self) -> np.ndarray:
        """Eigenvalues of Q M = C, descending."""
        return np.sort(self.pencil_eigenvalues ** (-1.0))[::-1]


def dense_cov(grid: Grid, prior: PriorConfig, max_dofs: int = DENSE_DOF_LIMIT) -> DenseCovariance:
    """Dense C_alpha = Psi Lambda^{-alpha} Psi^T M from the full pencil eigensolve.

    Test oracle only; guarded to small grids.
    """
    n = grid.n_dofs
    if n > max_dofs:
        raise ValidationError(f"dense covariance oracle limited to {max_dofs} dofs, grid has {n}")
    coeff = prior.coefficients()
    m = assemble_mass(grid).toarray()
    k = assemble_stiffness(grid, coeff).toarray()
    lam, psi = scipy.linalg.eigh(k, m)  # psi^T M psi = I
    if lam[0] <= 0:
        raise ValidationError("operator pencil is singular (kappa2 = 0?); covariance undefined")
    scaled = psi * lam ** (-prior.alpha)
    q = scaled @ psi.T
    q = 0.5 * (q + q.T)
    return DenseCovariance(c=q @ m, q=q, pencil_eigenvalues=lam, eigenvectors=psi, m=m, k=k)


def estimate_diag(
    matvec,
    n: int,
    n_samples: int,
    rank: int | None = None,
    stream: RandomStream | None = None,
    seed: int = 0,
) -> np.ndarray:
    """Stochastic diagonal estimate of a symmetric operator.

    Splits the matvec budget between a randomized low-rank capture (whose
    diagonal is computed exactly) and a Hutchinson estimate with Rademacher
    probes on the deflated remainder.  ``rank`` defaults to a third of the
    budget; the remaining ``n_samples - 2*rank`` matvecs feed the probes.
    Deterministic for a fixed seed/stream.
    """
    if n_samples < 2:
        raise ValidationError("need at least 2 samples")
    if rank is None:
        rank = n_samples // 3
    if rank < 0 or 2 * rank > n_samples:
        raise ValidationError(f"rank must satisfy 0 <= 2*rank <= n_samples, got rank={rank}")
    if stream is None:
        stream = RandomStream(seed)

    diag = np.zeros(n)
    qb = None
    if rank > 0:
        omega = stream.normal((n, rank))
        y = np.stack([matvec(omega[:, i]) for i in range(rank)], axis=1)
        qb, _ = np.linalg.qr(y)
        aq = np.stack([matvec(qb[:, i]) for i in range(rank)], axis=1)
        diag += np.einsum("ij,ij->i", qb, aq)

    n_probe = n_samples - 2 * rank
    if n_probe > 0:
        num = np.zeros(n)
        den = np.zeros(n)
        for _ in range(n_probe):
            v = stream.rademacher(n)
            w = matvec(v)
            if qb is not None:
                w = w - qb @ (qb.T @ w)
            num += v * w
            den += v * v
        diag += num / den
    return diag


def estimate_diag_q(app: CovarianceApplicator, n_samples: int, rank: int | None = None,
                    stream: RandomStream | None = None, seed: int = 0) -> np.ndarray:
    """Diagonal of Q = C_alpha M^{-1} by the stochastic estimator above."""
    return estimate_diag(app.apply_q, app.n_dofs, n_samples, rank=rank, stream=stream, seed=seed)
