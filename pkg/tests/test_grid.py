"""Q1 assembly identities, factorization contracts, grid bookkeeping."""

import math

import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp

from wmprior import (
    Coefficients,
    Field,
    Grid,
    InvalidCoefficientError,
    InvalidGridError,
    NotSPDError,
    RandomStream,
    anisotropy_tensor,
    assemble_mass,
    assemble_stiffness,
    cholesky_mass,
    factorize,
    load_matrix,
    save_matrix,
)


def test_grid_basics():
    g = Grid(5, 7)
    assert g.n_dofs == 35
    assert g.dx == 0.25 and g.dy == pytest.approx(1 / 6)
    assert g.quad_h == 0.2
    assert g.node_index(2, 3) == 3 * 5 + 2
    x, y = g.node_coords()
    assert x[g.node_index(2, 3)] == pytest.approx(0.5)
    assert y[g.node_index(2, 3)] == pytest.approx(0.5)


def test_grid_validation():
    with pytest.raises(InvalidGridError):
        Grid(1, 5)
    with pytest.raises(InvalidGridError):
        Grid(5, 1)
    with pytest.raises(InvalidGridError):
        Grid(5, 5, lx=0.0)


def test_mass_total_equals_area_single_element():
    m = assemble_mass(Grid(2, 2))
    assert m.sum() == pytest.approx(1.0, abs=1e-15)


def test_mass_partition_of_unity():
    g = Grid(9, 13, lx=2.0, ly=0.5)
    m = assemble_mass(g)
    lumped = m @ np.ones(g.n_dofs)
    assert lumped.sum() == pytest.approx(g.area, rel=1e-14)


def test_mass_matches_tensor_product():
    m = assemble_mass(Grid(3, 3)).toarray()
    h = 0.5
    m1 = h * np.array([[1 / 3, 1 / 6, 0], [1 / 6, 2 / 3, 1 / 6], [0, 1 / 6, 1 / 3]])
    np.testing.assert_allclose(m, np.kron(m1, m1), atol=1e-15)


def test_stiffness_constant_nullspace():
    g = Grid(17, 17)
    k = assemble_stiffness(g, Coefficients(kappa2=0.0))
    assert np.abs(k @ np.ones(g.n_dofs)).max() <= 1e-13


def test_stiffness_reaction_total():
    g = Grid(9, 9, lx=2.0, ly=3.0)
    k = assemble_stiffness(g, Coefficients(kappa2=4.0))
    ones = np.ones(g.n_dofs)
    assert ones @ (k @ ones) == pytest.approx(4.0 * g.area, rel=1e-13)


def test_pencil_smallest_eigenvalue_is_kappa2():
    g = Grid(33, 33)
    m = assemble_mass(g).toarray()
    k = assemble_stiffness(g, Coefficients(kappa2=100.0)).toarray()
    lam, vecs = scipy.linalg.eigh(k, m, subset_by_index=[0, 0])
    assert lam[0] == pytest.approx(100.0, rel=1e-10)
    v = vecs[:, 0] / vecs[0, 0]
    np.testing.assert_allclose(v, np.ones(g.n_dofs), rtol=1e-8)


def test_matrices_symmetric_and_sorted():
    g = Grid(7, 5)
    coeff = Coefficients(kappa2=3.0, theta=anisotropy_tensor(2.0, 0.5, 0.3))
    for a in (assemble_mass(g), assemble_stiffness(g, coeff)):
        assert (a != a.T).nnz == 0
        assert a.has_sorted_indices


def test_patch_test_linear_energy():
    """Q1 reproduces linear fields: u = a + bx + cy has energy (b^2+c^2)|O|."""
    g = Grid(6, 9, lx=1.5, ly=0.75)
    k = assemble_stiffness(g, Coefficients(kappa2=0.0))
    x, y = g.node_coords()
    a, b, c = 0.7, -1.3, 2.1
    u = a + b * x + c * y
    assert u @ (k @ u) == pytest.approx((b * b + c * c) * g.area, rel=1e-12)


def test_mesh_rotation_symmetry():
    """Constant-coefficient matrices are invariant under 90-degree rotation."""
    n = 6
    g = Grid(n, n)
    perm = np.empty(g.n_dofs, dtype=int)
    for j in range(n):
        for i in range(n):
            perm[g.node_index(j, n - 1 - i)] = g.node_index(i, j)
    p = sp.csr_matrix((np.ones(g.n_dofs), (perm, np.arange(g.n_dofs))))
    for a in (assemble_mass(g), assemble_stiffness(g, Coefficients(kappa2=5.0))):
        diff = p @ a @ p.T - a
        assert np.abs(diff.toarray()).max() <= 1e-14 * np.abs(a.toarray()).max()


def test_adjointness_in_mass_inner_product():
    """B = M^{-1} S with S symmetric satisfies <u, Bv>_M = <Bu, v>_M."""
    g = Grid(9, 9)
    m = assemble_mass(g)
    s = assemble_stiffness(g, Coefficients(kappa2=50.0))
    mf = factorize(m)
    rng = np.random.default_rng(5)
    for _ in range(3):
        u, v = rng.standard_normal((2, g.n_dofs))
        left = u @ (m @ mf.solve(s @ v))
        right = mf.solve(s @ u) @ (m @ v)
        assert abs(left - right) <= 1e-12 * max(abs(left), abs(right))


def test_variable_coefficients_match_constant():
    g = Grid(8, 8)
    const = assemble_stiffness(g, Coefficients(kappa2=7.0, theta=np.diag([2.0, 3.0])))
    per_node = assemble_stiffness(
        g,
        Coefficients(kappa2=np.full(g.n_dofs, 7.0),
                     theta=np.tile(np.diag([2.0, 3.0]), (g.n_dofs, 1, 1))),
    )
    assert np.abs((const - per_node).toarray()).max() <= 1e-13


def test_variable_kappa2_integrates_nodal_interpolant():
    g = Grid(9, 9)
    x, _ = g.node_coords()
    kap = np.where(x > 0.5, 100.0, 0.0)
    k = assemble_stiffness(g, Coefficients(kappa2=kap))
    ones = np.ones(g.n_dofs)
    # 1^T K 1 integrates the bilinear interpolant of kappa^2: 100 on
    # x in (0.625, 1] plus the linear ramp over one element width
    expected = 100.0 * (0.375 + 0.5 * 0.125)
    assert ones @ (k @ ones) == pytest.approx(expected, rel=1e-12)


def test_coefficient_validation():
    with pytest.raises(InvalidCoefficientError):
        Coefficients(kappa2=-1.0)
    with pytest.raises(InvalidCoefficientError):
        Coefficients(theta=np.array([[1.0, 0.2], [0.3, 1.0]]))  # not symmetric
    with pytest.raises(InvalidCoefficientError):
        Coefficients(theta=np.array([[1.0, 2.0], [2.0, 1.0]]))  # indefinite
    with pytest.raises(InvalidCoefficientError):
        Coefficients(tau=2.0)
    with pytest.raises(InvalidCoefficientError):
        Coefficients(kappa2=np.ones(7)).validate_on(Grid(3, 3))


def test_factorize_identity():
    ident = sp.identity(10, format="csr")
    f = factorize(ident)
    b = np.arange(10.0)
    np.testing.assert_allclose(f.solve(b), b, atol=1e-15)


def test_factorize_residual_contract():
    g = Grid(33, 33)
    m = assemble_mass(g)
    f = factorize(m)
    b = np.random.default_rng(0).standard_normal(g.n_dofs)
    x = f.solve(b)
    assert np.linalg.norm(m @ x - b) <= 1e-12 * np.linalg.norm(b)


def test_factorize_singular_raises():
    g = Grid(9, 9)
    k = assemble_stiffness(g, Coefficients(kappa2=0.0))
    with pytest.raises(NotSPDError):
        factorize(k)


def test_factorize_indefinite_reports_pivot():
    a = sp.csr_matrix(np.diag([2.0, -3.0, 1.0]))
    with pytest.raises(NotSPDError) as exc:
        factorize(a)
    assert exc.value.pivot_index is not None


def test_cholesky_diagonal():
    f = cholesky_mass(sp.csr_matrix(4.0 * np.eye(5)))
    l = f.l_matrix().toarray()
    np.testing.assert_allclose(l, 2.0 * np.eye(5), atol=1e-15)


def test_cholesky_factor_reconstructs_mass():
    g = Grid(65, 65)
    m = assemble_mass(g)
    f = cholesky_mass(m)
    rng = np.random.default_rng(1)
    x = rng.standard_normal(g.n_dofs)
    mx = m @ x
    assert np.linalg.norm(f.apply_l(f.l_matrix().T @ x) - mx) <= 1e-12 * np.linalg.norm(mx)
    b = rng.standard_normal(g.n_dofs)
    assert np.linalg.norm(m @ f.solve(b) - b) <= 1e-12 * np.linalg.norm(b)


def test_cholesky_not_spd():
    with pytest.raises(NotSPDError):
        cholesky_mass(sp.csr_matrix(np.diag([1.0, -1.0])))


def test_cholesky_white_noise_covariance():
    """cov(L w) = M empirically for w ~ N(0, I)."""
    g = Grid(5, 5)
    m = assemble_mass(g).toarray()
    f = cholesky_mass(sp.csr_matrix(m))
    n_draw = 10_000
    w = RandomStream(11).normal((g.n_dofs, n_draw))
    samples = f.apply_l(w)
    emp = samples @ samples.T / n_draw
    se = np.sqrt((np.outer(np.diag(m), np.diag(m)) + m**2) / n_draw)
    assert np.all(np.abs(emp - m) <= 5.0 * se)


def test_matrix_market_roundtrip(tmp_path):
    g = Grid(6, 6)
    k = assemble_stiffness(g, Coefficients(kappa2=3.0))
    path = tmp_path / "k.mtx"
    save_matrix(path, k)
    k2 = load_matrix(path)
    assert np.abs((k - k2).toarray()).max() <= 1e-15 * np.abs(k.toarray()).max()


def test_field_wrapper():
    g = Grid(4, 3)
    f = Field.from_function(g, lambda x, y: x + 10 * y)
    assert f.reshape().shape == (3, 4)
    assert f.values[g.node_index(2, 1)] == pytest.approx(2 / 3 + 5.0)
    with pytest.raises(InvalidGridError):
        Field(np.zeros(5), g)
