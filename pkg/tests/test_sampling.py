"""Random streams, SPDE sampling, and the truncated KL machinery."""

import math

import numpy as np
import pytest
import scipy.linalg

from wmprior import (
    Coefficients,
    CovarianceApplicator,
    Grid,
    KLBasis,
    PriorConfig,
    RandomStream,
    SpdeSampler,
    ValidationError,
    anisotropy_tensor,
    dense_cov,
    kl_eigs,
    sample_kl,
    sample_spde,
)


def test_stream_bitwise_reproducible():
    a = RandomStream(123)
    b = RandomStream(123)
    np.testing.assert_array_equal(a.normal(1000), b.normal(1000))
    np.testing.assert_array_equal(a.rademacher(100), b.rademacher(100))
    np.testing.assert_array_equal(a.uniform((3, 4)), b.uniform((3, 4)))


def test_stream_moments():
    z = RandomStream(0).normal(200_000)
    assert abs(z.mean()) < 0.01
    assert abs(z.var() - 1.0) < 0.01
    u = RandomStream(1).uniform(100_000)
    assert 0.0 < u.min() and u.max() <= 1.0
    r = RandomStream(2).rademacher(100_000)
    assert set(np.unique(r)) == {-1.0, 1.0}
    assert abs(r.mean()) < 0.02


def test_stream_branches_decorrelate():
    base = RandomStream(7)
    z1 = base.branch(1).normal(5000)
    z2 = base.branch(2).normal(5000)
    rho = np.corrcoef(z1, z2)[0, 1]
    assert abs(rho) < 0.05


def test_spde_zero_noise_gives_zero_field():
    g = Grid(9, 9)
    u = sample_spde(g, Coefficients(kappa2=100.0), 1.5, RandomStream(0),
                    noise=np.zeros(g.n_dofs))
    assert not u.any()


def test_spde_seed_determinism_and_decorrelation():
    g = Grid(17, 17)
    sampler = SpdeSampler(g, Coefficients(kappa2=100.0), 1.5)
    u1 = sampler.draw(RandomStream(5))
    u2 = sampler.draw(RandomStream(5))
    np.testing.assert_array_equal(u1, u2)
    draws_a, draws_b = [], []
    sa, sb = RandomStream(5), RandomStream(6)
    for _ in range(50):
        draws_a.append(sampler.draw(sa))
        draws_b.append(sampler.draw(sb))
    rho = np.corrcoef(np.ravel(draws_a), np.ravel(draws_b))[0, 1]
    assert abs(rho) < 0.1


def test_spde_alpha_range():
    g = Grid(9, 9)
    with pytest.raises(ValidationError):
        sample_spde(g, Coefficients(kappa2=100.0), 2.0, RandomStream(0))
    with pytest.raises(ValidationError):
        SpdeSampler(g, Coefficients(kappa2=100.0), 0.0)


def test_spde_variance_matches_dense_oracle():
    """Empirical nodal variance vs diag(C M^{-1}) at probe nodes.

    Uses the refined quadrature step so rule truncation bias stays far below
    the Monte-Carlo error (see ledger); 4000 draws, 5-SE bound at 20 nodes.
    """
    g = Grid(9, 9)
    prior = PriorConfig(alpha=1.5, kappa2=100.0)
    sampler = SpdeSampler(g, Coefficients(kappa2=100.0), 1.5, zeta=1.0 / math.log(257))
    stream = RandomStream(42)
    n_draw = 4000
    acc = np.zeros(g.n_dofs)
    acc2 = np.zeros(g.n_dofs)
    for _ in range(n_draw):
        u = sampler.draw(stream)
        acc += u
        acc2 += u * u
    var = acc2 / n_draw - (acc / n_draw) ** 2
    truth = np.diag(dense_cov(g, prior).q)
    se = truth * math.sqrt(2.0 / n_draw)
    probes = np.linspace(0, g.n_dofs - 1, 20).astype(int)
    assert np.all(np.abs(var[probes] - truth[probes]) <= 5.0 * se[probes])


def test_anisotropic_samples_elongate_along_strong_axis():
    """Correlation decays slower along the strong eigenvector of Theta.

    With the rotation convention R(theta) diag(l1^2, l2^2) R(theta)^T,
    theta = pi/4 puts the large eigenvalue on (1, -1)/sqrt(2): the diagonal
    variogram there must sit well below the (1, 1) one.
    """
    theta = anisotropy_tensor(10.0, 1.0, math.pi / 4)
    evals, evecs = np.linalg.eigh(theta)
    strong = evecs[:, -1]
    assert abs(strong @ np.array([1.0, -1.0]) / math.sqrt(2)) > 0.999

    g = Grid(17, 17)
    sampler = SpdeSampler(g, Coefficients(kappa2=100.0, theta=theta), 1.5)
    stream = RandomStream(3)
    lag = 2
    sq_strong = sq_weak = 0.0
    n_draw = 500
    for _ in range(n_draw):
        u = sampler.draw(stream).reshape(g.ny, g.nx)
        c = u[4:-4, 4:-4]
        weak = u[4 + lag: u.shape[0] - 4 + lag, 4 + lag: u.shape[1] - 4 + lag]  # (1,1)
        strong_sh = u[4 - lag: u.shape[0] - 4 - lag, 4 + lag: u.shape[1] - 4 + lag]  # (1,-1)
        sq_weak += np.mean((c - weak) ** 2)
        sq_strong += np.mean((c - strong_sh) ** 2)
    assert sq_weak / sq_strong > 1.5


def test_kl_eigs_alpha_one_matches_pencil():
    """Slowly decaying alpha = 1 spectrum needs power iterations to resolve."""
    g = Grid(17, 17)
    prior = PriorConfig(alpha=1.0, kappa2=100.0)
    app = CovarianceApplicator(g, prior)
    basis = kl_eigs(app, n_modes=10, oversample=50, stream=RandomStream(0), n_power=4)
    truth = np.sort(dense_cov(g, prior).pencil_eigenvalues ** -1.0)[::-1][:10]
    np.testing.assert_allclose(basis.eigenvalues, truth, rtol=1e-4)


def test_kl_basis_invariants():
    """Eigensolver-quality invariants, measured against the exact operator.

    Uses the refined quadrature step so the generalized residual reflects
    the randomized eigensolver, not sinc-rule truncation (see ledger).
    """
    g = Grid(17, 17)
    prior = PriorConfig(alpha=2.5, kappa2=80.0)
    app = CovarianceApplicator(g, prior, zeta=0.12, tol=1e-11)
    basis = kl_eigs(app, n_modes=12, oversample=40, stream=RandomStream(1), n_power=3)
    lam = basis.eigenvalues
    assert np.all(lam[:-1] >= lam[1:]) and lam[-1] > 0
    gram = basis.vectors.T @ (app.m @ basis.vectors)
    assert np.abs(gram - np.eye(12)).max() <= 1e-8
    dc = dense_cov(g, prior)
    resid = dc.m @ (dc.c @ basis.vectors) - dc.m @ basis.vectors * lam
    assert np.abs(resid).max() <= 1e-6 * lam[0]
    assert np.all(np.diff(basis.truncation_energy()) >= 0)


def test_kl_spectral_transformation_widens_gaps():
    g = Grid(17, 17)
    ratios = {}
    for alpha in (1.5, 3.5):
        app = CovarianceApplicator(g, PriorConfig(alpha=alpha, kappa2=100.0))
        basis = kl_eigs(app, n_modes=10, oversample=25, stream=RandomStream(2), n_power=2)
        ratios[alpha] = basis.eigenvalues[0] / basis.eigenvalues[9]
    assert ratios[3.5] > ratios[1.5]


def test_kl_eigs_validation():
    g = Grid(9, 9)
    app = CovarianceApplicator(g, PriorConfig(alpha=1.5, kappa2=100.0))
    with pytest.raises(ValidationError):
        kl_eigs(app, n_modes=81, oversample=20)
    with pytest.raises(ValidationError):
        kl_eigs(app, n_modes=0)


def test_sample_kl_zero_xi_returns_mean():
    g = Grid(9, 9)
    app = CovarianceApplicator(g, PriorConfig(alpha=1.5, kappa2=100.0))
    basis = kl_eigs(app, n_modes=5, oversample=10, stream=RandomStream(3))
    mean = np.linspace(0, 1, g.n_dofs)
    u = sample_kl(basis, mean, RandomStream(0), xi=np.zeros(5))
    np.testing.assert_array_equal(u, mean)


def test_sample_kl_single_mode_variance():
    g = Grid(9, 9)
    prior = PriorConfig(alpha=2.5, kappa2=100.0)
    app = CovarianceApplicator(g, prior)
    basis = kl_eigs(app, n_modes=1, oversample=15, stream=RandomStream(4), n_power=2)
    lam1 = basis.eigenvalues[0]
    psi = basis.vectors[:, 0]
    m_psi = app.m @ psi
    stream = RandomStream(8)
    n_draw = 10_000
    proj = np.array([sample_kl(basis, None, stream) @ m_psi for _ in range(n_draw)])
    se = lam1 * math.sqrt(2.0 / n_draw)
    assert abs(proj.var() - lam1) <= 4.0 * se


def test_sample_kl_full_rank_covariance():
    """A full-rank basis reproduces the nodal covariance C M^{-1}.

    The basis is built from the dense pencil eigendecomposition (a square
    Gaussian sketch has unbounded condition number), so this isolates the
    sampling formula u = sum sqrt(lambda_j) xi_j psi_j.
    """
    g = Grid(9, 9)
    prior = PriorConfig(alpha=2.5, kappa2=100.0)
    dc = dense_cov(g, prior)
    basis = KLBasis(eigenvalues=dc.pencil_eigenvalues[::-1] ** -2.5,
                    vectors=dc.eigenvectors[:, ::-1], grid=g, alpha=2.5)
    q = dc.q
    n_draw = 20_000
    stream = RandomStream(9)
    samples = np.stack([sample_kl(basis, None, stream) for _ in range(n_draw)], axis=1)
    emp = samples @ samples.T / n_draw
    se = np.sqrt((np.outer(np.diag(q), np.diag(q)) + q**2) / n_draw)
    assert np.all(np.abs(emp - q) <= 5.0 * np.maximum(se, 1e-15))
