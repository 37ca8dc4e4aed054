"""Linear solvers for the practical MINRES system.

The saddle-point system ``[[A, B], [B^T, 0]] [y; x] = [f; 0]`` is solved
through its Schur complement ``B^T A^-1 B`` (dense Cholesky on small
problems, preconditioned CG otherwise).  The SPD reduction replaces
``A^-1`` by a test-space preconditioner ``K``.
"""
import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

DENSE_SCHUR_MAX = 1500
DENSE_FALLBACK_MAX = 5000
INNER_TOL = 1e-12
BLOCK_TOL = 1e-9


class SolverError(RuntimeError):
    """Linear solver failure."""


class InfSupError(SolverError):
    """Singular Schur complement: the test space does not control the
    trial space."""


# ---------------------------------------------------------------------------
# factorizations and Krylov

class Factorization:
    """Sparse LU factorization (symmetric ordering for SPD matrices).

    SPD matrices are equilibrated by their diagonal first; Gram matrices of
    strongly graded meshes otherwise span many orders of magnitude.
    """

    def __init__(self, M, spd=True):
        M = sp.csc_matrix(M)
        if M.shape[0] != M.shape[1]:
            raise SolverError(f"matrix is not square: {M.shape}")
        self.shape = M.shape
        self.n = M.shape[0]
        self._dense = None
        self._scale = None
        if self.n == 0:
            return
        if spd:
            diag = M.diagonal()
            if np.any(diag <= 0) or not np.all(np.isfinite(diag)):
                raise SolverError("matrix is not positive definite")
            self._scale = 1.0 / np.sqrt(diag)
            D = sp.diags(self._scale)
            M = sp.csc_matrix(D @ M @ D)
        try:
            if spd:
                self._lu = spla.splu(M, permc_spec="MMD_AT_PLUS_A",
                                     diag_pivot_thresh=0.0,
                                     options={"SymmetricMode": True})
            else:
                self._lu = spla.splu(M)
        except RuntimeError as exc:
            if self.n > DENSE_FALLBACK_MAX:
                raise SolverError(f"sparse factorization failed: {exc}") from exc
            try:
                with warnings.catch_warnings():
                    # exact zero pivots are reported by the check below
                    warnings.simplefilter("ignore", la.LinAlgWarning)
                    self._dense = la.lu_factor(M.toarray(), check_finite=True)
            except (la.LinAlgError, ValueError) as exc2:
                raise SolverError(f"singular matrix: {exc2}") from exc2
            piv = np.abs(np.diag(self._dense[0]))
            if piv.min() <= 1e-14 * piv.max():
                raise SolverError(
                    f"numerically singular matrix (pivot ratio "
                    f"{piv.min() / piv.max():.2e})") from exc
        if self._dense is None:
            U = self._lu.U.diagonal()
            if np.any(U == 0) or not np.all(np.isfinite(U)):
                raise SolverError("zero pivot in sparse factorization")

    def solve(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        if self.n == 0:
            return np.zeros_like(rhs)
        d = self._scale
        if d is not None:
            d = d if rhs.ndim == 1 else d[:, None]
            rhs = d * rhs
        if self._dense is not None:
            out = la.lu_solve(self._dense, rhs)
        else:
            out = self._lu.solve(rhs)
        return out if d is None else d * out

    __call__ = solve


def sparse_solve(M, rhs, spd=None, tol=1e-10):
    """Solve ``M x = rhs`` by sparse factorization.

    ``spd=None`` picks the symmetric path when ``M`` is numerically
    symmetric.  Raises :class:`SolverError` on singularity or when the
    relative residual exceeds ``tol``.
    """
    M = sp.csr_matrix(M)
    rhs = np.asarray(rhs, dtype=float)
    if spd is None:
        d = abs(M - M.T)
        spd = (d.max() if d.nnz else 0.0) <= 1e-12 * max(abs(M).max(), 1e-300)
    x = Factorization(M, spd=spd).solve(rhs)
    nb = np.linalg.norm(rhs)
    res = np.linalg.norm(M @ x - rhs)
    if res > tol * max(nb, 1e-300) and nb > 0:
        raise SolverError(f"relative residual {res / nb:.2e} exceeds {tol:.0e}")
    return x


def _as_apply(M):
    if M is None:
        return lambda v: v
    if callable(M) and not hasattr(M, "shape"):
        return M
    if isinstance(M, Factorization):
        return M.solve
    return lambda v: M @ v


def pcg(M, rhs, precond=None, rel_tol=1e-10, maxiter=None, x0=None):
    """Preconditioned conjugate gradients.

    ``M`` and ``precond`` may be matrices or callables.  Stops when the
    preconditioned residual norm ``sqrt(r^T P r)`` has dropped by
    ``rel_tol`` relative to that of ``rhs``.  Returns ``(x, iterations)``.
    """
    apply_m = _as_apply(M)
    apply_p = _as_apply(precond)
    b = np.asarray(rhs, dtype=float)
    n = b.shape[0]
    maxiter = 10 * max(n, 1) if maxiter is None else maxiter
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - apply_m(x) if x0 is not None else b.copy()
    z = apply_p(r)
    rz = r @ z
    zb = apply_p(b)
    ref = np.sqrt(max(b @ zb, 0.0))
    if ref == 0.0:
        return np.zeros(n), 0
    if rz < 0:
        raise SolverError("preconditioner is not positive definite")
    p = z.copy()
    for it in range(1, maxiter + 1):
        if np.sqrt(rz) <= rel_tol * ref:
            return x, it - 1
        q = apply_m(p)
        curv = p @ q
        if curv <= 0:
            raise SolverError(f"non-positive curvature {curv:.3e} at iteration {it}")
        alpha = rz / curv
        x += alpha * p
        r -= alpha * q
        z = apply_p(r)
        rz_new = r @ z
        if rz_new < 0:
            raise SolverError("preconditioner is not positive definite")
        p = z + (rz_new / rz) * p
        rz = rz_new
    if np.sqrt(rz) <= rel_tol * ref:
        return x, maxiter
    raise SolverError(f"PCG did not converge in {maxiter} iterations "
                      f"(residual ratio {np.sqrt(rz) / ref:.2e})")


# ---------------------------------------------------------------------------
# preconditioners

EXACT, JACOBI = "ExactInverse", "Jacobi"


@dataclass
class PreconditionerSpec:
    """Test-space preconditioner ``K`` approximating ``A^-1``.

    ``lambda_min``/``lambda_max`` bound the spectrum of ``K A``; for the
    exact inverse both are 1.
    """

    kind: str = EXACT
    target: str = "A"
    lambda_min: Optional[float] = None
    lambda_max: Optional[float] = None

    def __post_init__(self):
        if self.kind not in (EXACT, JACOBI):
            raise ValueError(f"unknown preconditioner kind {self.kind!r}")
        if self.kind == EXACT:
            self.lambda_min = self.lambda_max = 1.0

    def operator(self, A):
        """Return a callable applying ``K``."""
        if self.kind == EXACT:
            return Factorization(A).solve
        d = sp.csr_matrix(A).diagonal()
        if np.any(d <= 0):
            raise SolverError("Jacobi preconditioner is not positive definite")
        return lambda v: v / d if v.ndim == 1 else v / d[:, None]

    def spectral_bounds(self, A):
        """Compute and store extreme eigenvalues of ``K A`` (Jacobi)."""
        if self.kind == EXACT:
            return self.lambda_min, self.lambda_max
        d = np.sqrt(sp.csr_matrix(A).diagonal())
        S = sp.diags(1 / d) @ A @ sp.diags(1 / d)
        if S.shape[0] <= 2000:
            ev = la.eigvalsh(S.toarray())
            self.lambda_min, self.lambda_max = float(ev[0]), float(ev[-1])
        else:
            v0 = np.ones(S.shape[0])
            self.lambda_max = float(spla.eigsh(S, 1, which="LA", v0=v0)[0][0])
            self.lambda_min = float(spla.eigsh(
                S, 1, sigma=0.0, which="LM", v0=v0,
                OPinv=spla.LinearOperator(S.shape, Factorization(S).solve))[0][0])
        return self.lambda_min, self.lambda_max


def exact_inverse():
    return PreconditionerSpec(EXACT)


def jacobi():
    return PreconditionerSpec(JACOBI)


# ---------------------------------------------------------------------------
# MINRES solves

@dataclass
class SolveResult:
    """Trial coefficients ``x``, test multipliers ``y`` (``None`` when not
    recoverable) and solver diagnostics."""

    x: np.ndarray
    y: Optional[np.ndarray]
    method: str
    residual: float = 0.0
    iterations: int = 0
    system: object = field(default=None, repr=False)
    preconditioner: Optional[PreconditionerSpec] = None


def _schur_operator(B, solve_a):
    BT = B.T.tocsr()
    return lambda v: BT @ solve_a(B @ v)


def _dense_schur(B, solve_a):
    nx = B.shape[1]
    S = np.empty((nx, nx))
    Bc = sp.csc_matrix(B)
    for start in range(0, nx, 256):
        cols = slice(start, min(start + 256, nx))
        AinvB = solve_a(Bc[:, cols].toarray())
        S[:, cols] = (B.T @ AinvB)
    return 0.5 * (S + S.T)


def _cholesky_or_fail(S):
    try:
        c = la.cho_factor(S, lower=True)
    except la.LinAlgError as exc:
        raise InfSupError("Schur complement is singular (inf-sup failure)") from exc
    piv = np.diag(c[0]) ** 2
    if piv.min() <= 1e-13 * piv.max():
        raise InfSupError(f"Schur complement is numerically singular "
                          f"(pivot ratio {piv.min() / piv.max():.2e})")
    return c


def _scaled_residual(A, B, f, x, y, schur_rhs):
    """Relative block residuals measured after Jacobi scaling of ``A``.

    The first block uses ``D = diag(A)^-1/2``; the second is the Schur
    residual ``B^T y`` relative to ``B^T A^-1 f``.  Both are invariant under
    diagonal rescaling of the test basis, so strongly graded meshes do not
    trigger spurious failures.
    """
    d = 1.0 / np.sqrt(sp.csr_matrix(A).diagonal())
    r1 = np.linalg.norm(d * (A @ y + B @ x - f)) / np.linalg.norm(d * f)
    r2 = np.linalg.norm(B.T @ y) / max(np.linalg.norm(schur_rhs),
                                         np.finfo(float).tiny)
    return float(max(r1, r2))


def solve_saddle(blocks, dense_max=DENSE_SCHUR_MAX):
    """Solve the saddle-point system with exact discrete dual norms."""
    A, B, f = blocks.A, blocks.B, blocks.f
    nx = B.shape[1]
    if not np.any(f):
        return SolveResult(np.zeros(nx), np.zeros(B.shape[0]), "Saddle",
                           system=blocks)
    fa = Factorization(A)
    rhs = B.T @ fa.solve(f)
    if nx <= dense_max:
        c = _cholesky_or_fail(_dense_schur(B, fa.solve))
        x = la.cho_solve(c, rhs)
        its = 0
    else:
        fm = Factorization(blocks.MX)
        try:
            x, its = pcg(_schur_operator(B, fa.solve), rhs, fm.solve,
                         rel_tol=INNER_TOL)
        except SolverError as exc:
            raise InfSupError(f"Schur complement solve failed: {exc}") from exc
    y = fa.solve(f - B @ x)
    res = _scaled_residual(A, B, f, x, y, rhs)
    log.info("saddle solve dim_x=%d dim_y=%d iterations=%d residual=%.3e",
             nx, B.shape[0], its, res)
    if res > BLOCK_TOL:
        raise SolverError(f"saddle block residual {res:.2e} exceeds {BLOCK_TOL:.0e}")
    return SolveResult(x, y, "Saddle", res, its, blocks, exact_inverse())


def reduce_spd(blocks, K=None):
    """Solve ``B^T K B x = B^T K f`` for a test-space preconditioner ``K``."""
    K = exact_inverse() if K is None else K
    A, B, f = blocks.A, blocks.B, blocks.f
    nx = B.shape[1]
    apply_k = K.operator(A)
    if not np.any(f):
        return SolveResult(np.zeros(nx), np.zeros(B.shape[0]) if K.kind == EXACT
                           else None, "SPDReduced", system=blocks, preconditioner=K)
    rhs = B.T @ apply_k(f)
    if K.kind == EXACT:
        fm = Factorization(blocks.MX)
        x, its = pcg(_schur_operator(B, apply_k), rhs, fm.solve,
                     rel_tol=INNER_TOL)
        y = apply_k(f - B @ x)
    else:
        d = sp.csr_matrix(A).diagonal()
        N = (B.T @ sp.diags(1.0 / d) @ B).tocsr()
        x = sparse_solve(N, rhs, spd=True)
        its = 0
        y = None
    res = np.linalg.norm(B.T @ apply_k(B @ x - f)) / max(np.linalg.norm(rhs), 1e-300)
    log.info("spd solve kind=%s dim_x=%d iterations=%d residual=%.3e",
             K.kind, nx, its, res)
    if res > BLOCK_TOL:
        raise SolverError(f"reduced residual {res:.2e} exceeds {BLOCK_TOL:.0e}")
    return SolveResult(x, y, "SPDReduced", res, its, blocks, K)


def residual_functional(blocks, x, K=None):
    """``(Bx - f)^T K (Bx - f)`` with ``K = A^-1`` by default."""
    K = exact_inverse() if K is None else K
    r = blocks.B @ x - blocks.f
    return float(r @ K.operator(blocks.A)(r))
