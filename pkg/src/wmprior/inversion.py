"""MAP estimation by generalized Golub-Kahan with hybrid regularization.

The whitened MAP system

    (F^T Gamma^{-1} F Q + lambda^2 I) zhat = F^T Gamma^{-1} (y - F m_pr)

is projected onto the Krylov space built by the generalized bidiagonalization
with inner products Gamma^{-1} (data side) and Q (parameter side).  The
Tikhonov parameter is picked per iteration by minimizing the projected GCV
function, and the converged basis is reused for a low-rank posterior
variance update via the Woodbury identity.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .covariance import CovarianceApplicator
from .errors import ValidationError
from .forward import LinearForward, NoiseModel

__all__ = [
    "GenGKState",
    "MapResult",
    "gengk_state",
    "gengk_expand",
    "solve_projected",
    "gcv_value",
    "select_lambda_gcv",
    "map_estimate",
    "posterior_variance",
]

BREAKDOWN_RTOL = 1e-14
GCV_BRACKET = (1e-10, 1e10)


class GenGKState:
    """Bases and bidiagonal entries of the generalized Golub-Kahan recurrence.

    U is Gamma^{-1}-orthonormal, V is Q-orthonormal; QV caches Q @ V so the
    posterior update and the next recurrence step need no extra applies of Q.
    delta1 is the Gamma^{-1} norm of the initial residual (the projected
    right-hand side scale); the bidiagonal matrix holds gammas on the
    diagonal and deltas (from delta_2 on) below it.
    """

    def __init__(self, u1, v1, qv1, gamma1, delta1, reorthogonalize=True):
        self.u_cols = [u1]
        self.v_cols = [v1]
        self.qv_cols = [qv1]
        self.gammas = [gamma1]
        self.deltas = []          # delta_{k+1} entries, appended per step
        self.delta1 = delta1
        self.reorthogonalize = reorthogonalize
        self.breakdown = False

    @property
    def k(self) -> int:
        """Completed bidiagonalization steps: B_k is fully populated (k+1) x k.

        Each expansion step appends delta_{k+1} and then the next (gamma, v)
        pair, so one v column beyond B_k is always in flight.
        """
        return len(self.deltas)

    @property
    def n_v(self) -> int:
        return len(self.v_cols)

    @property
    def u(self) -> np.ndarray:
        """Gamma^{-1}-orthonormal data-space basis U_{k+1}."""
        return np.stack(self.u_cols[: self.k + 1], axis=1)

    @property
    def v(self) -> np.ndarray:
        """Q-orthonormal parameter-space basis V_k."""
        return np.stack(self.v_cols[: self.k], axis=1)

    @property
    def qv(self) -> np.ndarray:
        """Cached Q V_k."""
        return np.stack(self.qv_cols[: self.k], axis=1)

    def bidiagonal(self) -> np.ndarray:
        """B_k of shape (k+1, k): diag gamma_1..k, subdiag delta_2..k+1."""
        k = self.k
        b = np.zeros((k + 1, k))
        b[np.arange(k), np.arange(k)] = self.gammas[:k]
        b[np.arange(1, k + 1), np.arange(k)] = self.deltas[:k]
        return b


def gengk_state(f: LinearForward, noise: NoiseModel, q_apply, b: np.ndarray,
                reorthogonalize: bool = True) -> GenGKState:
    """Initialize the recurrence from the shifted data vector b = y - F m_pr.

    A zero residual or a zero first direction (F^T Gamma^{-1} b = 0, e.g.
    F = 0) yields an empty state with ``breakdown`` set: the MAP estimate is
    the prior mean and no Krylov space exists.
    """
    b = np.asarray(b, dtype=float).ravel()
    delta1 = noise.norm(b)
    gamma1 = 0.0
    u1 = vt = qvt = None
    if delta1 > 0:
        u1 = b / delta1
        vt = f.apply_transpose(noise.weight(u1))
        qvt = q_apply(vt)
        gamma1 = float(np.sqrt(max(vt @ qvt, 0.0)))
    if delta1 == 0 or gamma1 <= BREAKDOWN_RTOL * delta1:
        state = GenGKState(np.zeros(f.n_data) if u1 is None else u1,
                           np.zeros(f.n_dofs), np.zeros(f.n_dofs), 0.0, delta1,
                           reorthogonalize)
        state.v_cols.clear()
        state.qv_cols.clear()
        state.gammas.clear()
        state.breakdown = True
        return state
    return GenGKState(u1, vt / gamma1, qvt / gamma1, gamma1, delta1, reorthogonalize)


def gengk_expand(state: GenGKState, f: LinearForward, noise: NoiseModel, q_apply) -> GenGKState:
    """One bidiagonalization step; sets ``state.breakdown`` on lucky termination.

    Full reorthogonalization (on by default) keeps U^T Gamma^{-1} U and
    V^T Q V near identity, which the posterior-variance update relies on.
    """
    if state.breakdown:
        return state
    scale = state.delta1
    u_prev, v_k, qv_k = state.u_cols[-1], state.v_cols[-1], state.qv_cols[-1]

    uhat = f.apply(qv_k) - state.gammas[-1] * u_prev
    if state.reorthogonalize:
        u_mat = np.stack(state.u_cols, axis=1)
        for _ in range(2):
            uhat -= u_mat @ (u_mat.T @ noise.weight(uhat))
    delta = noise.norm(uhat)
    if delta <= BREAKDOWN_RTOL * scale:
        state.breakdown = True
        return state
    u_next = uhat / delta
    state.u_cols.append(u_next)
    state.deltas.append(delta)

    vhat = f.apply_transpose(noise.weight(u_next)) - delta * v_k
    if state.reorthogonalize:
        v_mat = np.stack(state.v_cols, axis=1)
        qv_mat = np.stack(state.qv_cols, axis=1)
        for _ in range(2):
            vhat -= v_mat @ (qv_mat.T @ vhat)
    qvhat = q_apply(vhat)
    gamma = float(np.sqrt(max(vhat @ qvhat, 0.0)))
    if gamma <= BREAKDOWN_RTOL * scale:
        state.breakdown = True
        return state
    state.v_cols.append(vhat / gamma)
    state.qv_cols.append(qvhat / gamma)
    state.gammas.append(gamma)
    return state


def solve_projected(b: np.ndarray, delta1: float, lam: float):
    """Tikhonov solution of min ||B z - delta1 e1||^2 + lam^2 ||z||^2.

    QR of the stacked matrix [B; lam I]; returns (z, data-misfit norm).
    """
    if lam < 0:
        raise ValidationError("lambda must be nonnegative")
    mrows, k = b.shape
    stacked = np.vstack([b, lam * np.eye(k)])
    rhs = np.zeros(mrows + k)
    rhs[0] = delta1
    q, r = scipy.linalg.qr(stacked, mode="economic")
    z = scipy.linalg.solve_triangular(r, q.T @ rhs)
    resid = float(np.linalg.norm(b @ z - rhs[:mrows]))
    return z, resid


def gcv_value(lam: float, svals: np.ndarray, c: np.ndarray, k: int, weight: float = 1.0) -> float:
    """Projected GCV function evaluated through the SVD of B_k.

    G(lam) = k ||(I - B (B^T B + lam^2 I)^{-1} B^T) delta1 e1||^2 / tr(...)^2,
    with c = U^T (delta1 e1) from the full SVD basis.  ``weight`` scales the
    filter-factor sum in the trace (weighted-GCV variant; 1 = plain).
    """
    lam2 = lam * lam
    filt = lam2 / (svals ** 2 + lam2)          # 1 - sigma^2/(sigma^2+lam^2)
    num = float(np.sum((filt * c[: svals.shape[0]]) ** 2) + np.sum(c[svals.shape[0]:] ** 2))
    # stable trace: m - w*sum(sigma^2/(sigma^2+lam^2)) without cancellation
    trace = (c.shape[0] - svals.shape[0]) + (1.0 - weight) * svals.shape[0] \
        + weight * float(np.sum(filt))
    if trace == 0.0:
        return math.inf
    return k * num / (trace * trace)


def select_lambda_gcv(b: np.ndarray, delta1: float, bracket=GCV_BRACKET, weight: float | None = None):
    """Golden-section minimization of the projected GCV on log lambda.

    Returns (lambda, G(lambda)).  A flat GCV curve (all filter factors equal)
    yields the log-midpoint with a warning.
    """
    k = b.shape[1]
    u_full, svals, _ = scipy.linalg.svd(b)
    c = delta1 * u_full[0, :]
    w = 1.0 if weight is None else float(weight)

    lo, hi = np.log(bracket[0]), np.log(bracket[1])
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, d = lo, hi
    x1 = d - invphi * (d - a)
    x2 = a + invphi * (d - a)
    f1 = gcv_value(np.exp(x1), svals, c, k, w)
    f2 = gcv_value(np.exp(x2), svals, c, k, w)
    for _ in range(90):
        if f1 <= f2:
            d, x2, f2 = x2, x1, f1
            x1 = d - invphi * (d - a)
            f1 = gcv_value(np.exp(x1), svals, c, k, w)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (d - a)
            f2 = gcv_value(np.exp(x2), svals, c, k, w)
    lam = float(np.exp(0.5 * (a + d)))
    g = gcv_value(lam, svals, c, k, w)
    g_lo = gcv_value(bracket[0], svals, c, k, w)
    g_hi = gcv_value(bracket[1], svals, c, k, w)
    if abs(g_lo - g_hi) <= 1e-12 * max(g, g_lo, g_hi):
        lam = float(np.exp(0.5 * (np.log(bracket[0]) + np.log(bracket[1]))))
        warnings.warn("GCV curve is flat; returning the bracket midpoint")
        return lam, gcv_value(lam, svals, c, k, w)
    return lam, g


@dataclass
class MapResult:
    m_post: np.ndarray
    state: GenGKState
    lam: float
    k: int
    converged: bool
    history: list = field(default_factory=list)   # (k, lam, gcv, relative projected residual)
    z: np.ndarray | None = None


def map_estimate(
    f: LinearForward,
    noise: NoiseModel,
    app: CovarianceApplicator,
    y: np.ndarray,
    lam: float | None = None,
    max_iter: int = 100,
    min_iter: int = 5,
    gcv_rtol: float = 1e-5,
    gcv_patience: int = 3,
    uq_rank: int | None = None,
    reorthogonalize: bool = True,
    callback=None,
) -> MapResult:
    """Hybrid gen-GK solve for the MAP estimate.

    Per iteration the Tikhonov parameter is re-selected by projected GCV
    (or held at ``lam`` when given), and the iteration stops once the GCV
    value has stabilized for ``gcv_patience`` consecutive steps past
    ``min_iter``.  ``uq_rank`` keeps expanding the basis beyond the stopping
    index so the posterior-variance update can use a richer space.  The
    prior mean comes from ``app.prior.mean`` (None = zero).
    """
    app.prior.require_trace_class()
    m_pr = app.prior.mean if app.prior.mean is not None else np.zeros(f.n_dofs)
    b = np.asarray(y, dtype=float).ravel() - f.apply(m_pr)
    state = gengk_state(f, noise, app.apply_q, b, reorthogonalize=reorthogonalize)

    history = []
    g_prev = g_ref = None
    stable = 0
    k_stop = None
    lam_k = lam if lam is not None else 1.0
    z = np.zeros(0)

    while state.k < max_iter and not state.breakdown:
        gengk_expand(state, f, noise, app.apply_q)
        if state.breakdown and state.k == 0:
            break
        bmat = state.bidiagonal()
        if lam is None and state.k >= 2:
            lam_k, g_k = select_lambda_gcv(bmat, state.delta1)
        else:
            u_full, svals, _ = scipy.linalg.svd(bmat)
            c = state.delta1 * u_full[0, :]
            g_k = gcv_value(lam_k, svals, c, state.k)
        z, resid = solve_projected(bmat, state.delta1, lam_k)
        history.append((state.k, lam_k, g_k, resid / state.delta1))
        if callback is not None:
            callback(state, lam_k, z)
        if g_ref is None:
            g_ref = g_k if g_k > 0 else 1.0
        if g_prev is not None and abs(g_k - g_prev) / g_ref < gcv_rtol:
            stable += 1
        else:
            stable = 0
        g_prev = g_k
        if state.k >= min_iter and stable >= gcv_patience:
            k_stop = state.k
            break

    converged = k_stop is not None or state.breakdown
    if k_stop is None:
        k_stop = state.k
    if state.k == 0:
        return MapResult(m_pr.copy(), state, 0.0, 0, True, history, np.zeros(0))

    # MAP solution from the stopping index
    b_stop = state.bidiagonal()[: k_stop + 1, :k_stop]
    z_stop, _ = solve_projected(b_stop, state.delta1, lam_k)
    m_post = m_pr + state.qv[:, :k_stop] @ z_stop

    # optional extra expansion for the posterior-variance basis
    if uq_rank is not None:
        while state.k < uq_rank and not state.breakdown:
            gengk_expand(state, f, noise, app.apply_q)

    return MapResult(m_post, state, lam_k, k_stop, converged, history, z_stop)


def posterior_variance(state: GenGKState, lam: float, diag_q: np.ndarray):
    """Low-rank posterior variance: lam^{-2} diag(Q) - diag(Z Delta Z^T).

    Z = (Q V) W with B^T B = W Phi W^T; Delta_ii = lam^{-2} phi_i/(phi_i+lam^2).
    Negative entries (rank too small or a noisy diagonal estimate) are
    clamped to zero.  Returns (variance, update_term, n_clamped).
    """
    if lam <= 0:
        raise ValidationError("lambda must be positive")
    k = state.k
    if k == 0:
        return np.asarray(diag_q) / lam**2, np.zeros_like(np.asarray(diag_q)), 0
    b = state.bidiagonal()
    bt_b = b.T @ b
    phi, w = scipy.linalg.eigh(0.5 * (bt_b + bt_b.T))
    phi, w = phi[::-1], w[:, ::-1]
    phi = np.clip(phi, 0.0, None)
    z = state.qv @ w
    delta = phi / (lam**2 * (phi + lam**2))
    update = np.einsum("ij,j,ij->i", z, delta, z)
    var = np.asarray(diag_q, dtype=float) / lam**2 - update
    n_clamped = int(np.sum(var < 0))
    if n_clamped:
        var = np.clip(var, 0.0, None)
    return var, update, n_clamped
