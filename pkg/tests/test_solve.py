import numpy as np
import pytest
import scipy.linalg as la
import scipy.sparse as sp

from minresfem.assembly import SystemBlocks, ultraweak_system
from minresfem.mesh import uniform_refine
from minresfem.solve import (JACOBI, Factorization, InfSupError, PreconditionerSpec,
                             SolverError, exact_inverse, jacobi, pcg, reduce_spd,
                             residual_functional, solve_saddle, sparse_solve)


def random_spd(rng, n, cond=100.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (Q * np.geomspace(1, cond, n)) @ Q.T


def synthetic(rng, ny, nx):
    A = sp.csr_matrix(random_spd(rng, ny))
    B = sp.csr_matrix(rng.standard_normal((ny, nx)))
    return SystemBlocks(A, B, rng.standard_normal(ny), sp.identity(nx, format="csr"))


def mx_norm(blocks, v):
    return np.sqrt(v @ (blocks.MX @ v))


def test_zero_rhs(mesh0, corner_data):
    b = ultraweak_system(mesh0, 0, corner_data)
    b.f = np.zeros_like(b.f)
    for r in (solve_saddle(b), reduce_spd(b)):
        assert not np.any(r.x)
    assert not np.any(solve_saddle(b).y)


def test_square_invertible_gives_zero_multiplier(rng):
    b = synthetic(rng, 12, 12)
    r = solve_saddle(b)
    np.testing.assert_allclose(b.B @ r.x, b.f, atol=1e-10)
    assert np.abs(r.y).max() < 1e-10


def test_matches_dense_block_solve(mesh0, corner_data):
    b = ultraweak_system(mesh0, 0, corner_data)
    K = np.block([[b.A.toarray(), b.B.toarray()],
                  [b.B.T.toarray(), np.zeros((b.dim_x, b.dim_x))]])
    sol = la.solve(K, np.concatenate([b.f, np.zeros(b.dim_x)]))
    r = solve_saddle(b)
    np.testing.assert_allclose(r.x, sol[b.dim_y:], atol=1e-10)
    np.testing.assert_allclose(r.y, sol[:b.dim_y], atol=1e-10)
    assert r.method == "Saddle" and r.residual <= 1e-9


@pytest.mark.parametrize("p,shift", [(0, 0), (1, 0), (1, 1)])
def test_dense_and_iterative_schur_agree(mesh0, corner_data, p, shift):
    b = ultraweak_system(uniform_refine(mesh0), p, corner_data, shift)
    a, c = solve_saddle(b), solve_saddle(b, dense_max=0)
    assert c.iterations > 0
    assert mx_norm(b, a.x - c.x) <= 1e-9 * mx_norm(b, a.x)


@pytest.mark.parametrize("p", [0, 1, 2])
def test_spd_exact_equals_saddle(mesh_graded, corner_data, p):
    b = ultraweak_system(mesh_graded, p, corner_data, 1)
    s, r = solve_saddle(b), reduce_spd(b, exact_inverse())
    assert r.method == "SPDReduced"
    assert mx_norm(b, s.x - r.x) <= 1e-8 * mx_norm(b, s.x)
    np.testing.assert_allclose(r.y, s.y, atol=1e-8 * np.abs(s.y).max())


def test_jacobi_minimizes_its_functional(mesh0, corner_data, rng):
    b = ultraweak_system(mesh0, 0, corner_data, 1)
    K = jacobi()
    r = reduce_spd(b, K)
    assert r.y is None
    # dense oracle: minimize ||D^-1/2 (B x - f)|| via an eigendecomposition
    d = b.A.diagonal()
    Bs = b.B.toarray() / np.sqrt(d)[:, None]
    fs = b.f / np.sqrt(d)
    w, V = np.linalg.eigh(Bs.T @ Bs)
    x_or = V @ ((V.T @ (Bs.T @ fs)) / w)
    np.testing.assert_allclose(r.x, x_or, atol=1e-9 * np.abs(x_or).max())
    j0 = residual_functional(b, r.x, K)
    for _ in range(5):
        assert residual_functional(b, r.x + 1e-3 * rng.standard_normal(b.dim_x), K) > j0
    # and it is not the saddle solution
    assert np.abs(r.x - solve_saddle(b).x).max() > 1e-6


def test_saddle_minimizes_discrete_dual_norm(mesh0, corner_data, rng):
    b = ultraweak_system(uniform_refine(mesh0), 1, corner_data, 1)
    x = solve_saddle(b).x
    j0 = residual_functional(b, x)
    for _ in range(10):
        assert residual_functional(b, x + 1e-4 * rng.standard_normal(b.dim_x)) > j0


def test_preconditioner_bounds(mesh0, corner_data):
    b = ultraweak_system(mesh0, 1, corner_data)
    assert exact_inverse().spectral_bounds(b.A) == (1.0, 1.0)
    K = PreconditionerSpec(JACOBI)
    lo, hi = K.spectral_bounds(b.A)
    assert 0 < lo <= 1 <= hi
    with pytest.raises(ValueError):
        PreconditionerSpec("Multigrid")


def test_singular_schur_reports_infsup_failure(rng):
    b = synthetic(rng, 10, 4)
    B = b.B.toarray()
    B[:, 3] = B[:, 2]
    b.B = sp.csr_matrix(B)
    with pytest.raises(InfSupError):
        solve_saddle(b)


def test_pcg_identity_and_exact_preconditioner(rng):
    n = 30
    rhs = rng.standard_normal(n)
    x, it = pcg(sp.identity(n), rhs)
    assert it == 1 and np.allclose(x, rhs)
    M = random_spd(rng, n)
    x, it = pcg(M, rhs, Factorization(sp.csr_matrix(M)))
    assert it == 1
    np.testing.assert_allclose(M @ x, rhs, atol=1e-10)


def test_pcg_random_dense(rng):
    M = random_spd(rng, 50, 1e3)
    rhs = rng.standard_normal(50)
    x, it = pcg(M, rhs, rel_tol=1e-12)
    np.testing.assert_allclose(x, np.linalg.solve(M, rhs), rtol=1e-8)
    assert 1 < it <= 500


def test_pcg_detects_indefinite(rng):
    M = np.diag([1.0, -1.0, 2.0])
    with pytest.raises(SolverError):
        pcg(M, np.ones(3))


def test_pcg_reports_nonconvergence(rng):
    M = random_spd(rng, 40, 1e6)
    with pytest.raises(SolverError):
        pcg(M, rng.standard_normal(40), maxiter=3, rel_tol=1e-14)


def test_sparse_solve_basic(rng):
    rhs = rng.standard_normal(8)
    np.testing.assert_allclose(sparse_solve(sp.identity(8), rhs), rhs)
    d = rng.uniform(1, 2, 8)
    np.testing.assert_allclose(sparse_solve(sp.diags(d), rhs), rhs / d)
    M = random_spd(rng, 100)
    b = rng.standard_normal(100)
    x = sparse_solve(sp.csr_matrix(M), b)
    assert np.linalg.norm(M @ x - b) <= 1e-10 * np.linalg.norm(b)
    np.testing.assert_allclose(x, np.linalg.solve(M, b), rtol=1e-10)


def test_sparse_solve_indefinite(rng):
    M = rng.standard_normal((20, 20))
    b = rng.standard_normal(20)
    np.testing.assert_allclose(sparse_solve(sp.csr_matrix(M), b), np.linalg.solve(M, b),
                               rtol=1e-9)


def test_sparse_solve_singular():
    M = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(SolverError):
        sparse_solve(M, np.array([1.0, 0.0]))


def test_factorization_rejects_non_square():
    with pytest.raises(SolverError):
        Factorization(sp.csr_matrix(np.ones((2, 3))))
