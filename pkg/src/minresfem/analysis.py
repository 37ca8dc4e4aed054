"""Inf-sup constants, the built-in error estimator, the discrete Helmholtz
decomposition check, reference-solution errors and convergence rates."""
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import _chunks, _weights
from .fespace import CR, RT, make_space
from .mesh import DIRICHLET, NEUMANN
from .quadrature import triangle_rule
from .solve import EXACT, Factorization, SolverError, _dense_schur

DENSE_EIG_MAX = 2000
RITZ_PAIRS = 6
RANK_TOL = 1e-10


class EstimatorError(RuntimeError):
    """Estimator requested for a solve without test-space multipliers."""


# ---------------------------------------------------------------------------
# inf-sup

@dataclass
class InfSupReport:
    gamma_tilde: float
    dim_x: int
    dim_y: int
    method: str
    residual: float


def _check_spd(M, name):
    M = sp.csr_matrix(M)
    if np.any(M.diagonal() <= 0):
        raise ValueError(f"{name} is not positive definite")


def infsup_gamma(A, B, MX, dense_max=DENSE_EIG_MAX):
    """``sqrt`` of the smallest eigenvalue of the pencil ``(B^T A^-1 B, MX)``.

    Dense symmetric eigensolve for ``dim_x <= dense_max``; above that,
    shift-invert Lanczos at zero where each inverse application solves the
    saddle system ``[[A, B], [B^T, 0]]`` by a sparse LU factorization.
    The lower end of the spectrum is tightly clustered, so several Ritz
    pairs are requested and the smallest is kept.  The start vector is
    random (seeded) because symmetric meshes make constant vectors
    orthogonal to antisymmetric eigenvectors.
    """
    A, B, MX = sp.csr_matrix(A), sp.csr_matrix(B), sp.csr_matrix(MX)
    _check_spd(A, "A")
    _check_spd(MX, "MX")
    ny, nx = B.shape
    if B.nnz == 0:
        return InfSupReport(0.0, nx, ny, "dense-eig", 0.0)
    fa = Factorization(A)
    if nx <= dense_max:
        S = _dense_schur(B, fa.solve)
        try:
            w, v = la.eigh(S, MX.toarray(), subset_by_index=[0, 0])
        except la.LinAlgError as exc:
            raise ValueError(f"MX is not positive definite: {exc}") from exc
        lam, vec = w[0], v[:, 0]
        res = np.linalg.norm(S @ vec - lam * (MX @ vec))
        return InfSupReport(float(np.sqrt(max(lam, 0.0))), nx, ny,
                            "dense-eig", float(res))
    K = sp.bmat([[A, B], [B.T, None]], format="csc")
    try:
        fk = Factorization(K, spd=False)
    except SolverError:
        return InfSupReport(0.0, nx, ny, "Lanczos", 0.0)

    def opinv(v):
        # S z = v  <=>  [[A, B], [B^T, 0]] [y; z] = [0; -v]
        rhs = np.concatenate([np.zeros(ny), -v])
        return fk.solve(rhs)[ny:]

    S_op = spla.LinearOperator((nx, nx),
                               matvec=lambda v: B.T @ fa.solve(B @ v))
    OP = spla.LinearOperator((nx, nx), matvec=opinv)
    k = min(RITZ_PAIRS, nx - 1)
    w, v = spla.eigsh(S_op, k=k, M=MX, sigma=0.0, which="LM", OPinv=OP,
                      v0=np.random.default_rng(0).standard_normal(nx),
                      tol=1e-8)
    i = int(np.argmin(w))
    lam, vec = w[i], v[:, i]
    res = np.linalg.norm(S_op @ vec - lam * (MX @ vec))
    return InfSupReport(float(np.sqrt(max(lam, 0.0))), nx, ny, "Lanczos",
                        float(res))


# ---------------------------------------------------------------------------
# estimator

@dataclass
class ErrorReport:
    indicators: np.ndarray          # eta_T >= 0 per element
    estimator: float                # sqrt(sum eta_T^2)
    dofs: int
    error: Optional[float] = None   # X-norm error vs reference, if known

    @property
    def squared(self):
        return self.indicators ** 2


def _test_function_norms(rt, lag, mu, lam):
    """Per element ``||mu||_{H(div;T)}^2 + ||lam||_{H1(T)}^2``."""
    nt = rt.mesh.ntriangles
    out = np.zeros(nt)
    deg = max(rt.degree + 1, lag.degree)
    rule = triangle_rule(2 * deg)
    for el in _chunks(nt):
        w = _weights(rt, el, rule)
        d = rt.eval_basis(el, rule.points)
        c = rt.local_coefficients(mu, el)
        v = np.einsum("eqid,ei->eqd", d["val"], c)
        dv = np.einsum("eqi,ei->eq", d["div"], c)
        out[el] = np.einsum("eq,eq->e", (v ** 2).sum(-1) + dv ** 2, w)
        d = lag.eval_basis(el, rule.points)
        c = lag.local_coefficients(lam, el)
        v = np.einsum("eqi,ei->eq", d["val"], c)
        g = np.einsum("eqid,ei->eqd", d["grad"], c)
        out[el] += np.einsum("eq,eq->e", v ** 2 + (g ** 2).sum(-1), w)
    return out


def error_estimator(sol, blocks=None):
    """Element indicators ``sqrt(||mu||_{H(div;T)}^2 + ||lam||_{H1(T)}^2)``.

    Requires the test-space multipliers of a saddle solve or of an SPD
    solve with the exact Gram inverse.
    """
    blocks = sol.system if blocks is None else blocks
    if sol.y is None or (sol.preconditioner is not None
                         and sol.preconditioner.kind != EXACT):
        raise EstimatorError(
            "no Riesz multipliers available; recover them with an exact "
            "test-space solve y = A^-1 (f - B x)")
    rt, lag = blocks.test
    mu, lam = blocks.split_y(sol.y)
    eta2 = np.maximum(_test_function_norms(rt, lag, mu, lam), 0.0)
    return ErrorReport(np.sqrt(eta2), float(np.sqrt(eta2.sum())), blocks.dim_x)


# ---------------------------------------------------------------------------
# errors

def _dg_values(dg, coeffs, el, pts):
    phi = dg.eval_basis(el, pts)["val"]
    return np.einsum("eqi,ei->eq", phi, dg.local_coefficients(coeffs, el))


def _x_fields(blocks, x, el, pts):
    q1, q2, w = blocks.split_x(x)
    dg = blocks.trial
    return (_dg_values(dg, q1, el, pts), _dg_values(dg, q2, el, pts),
            _dg_values(dg, w, el, pts))


def error_vs_reference(sol, ref_sol):
    """X-norm (``L2^2 x L2``) distance between two trial solutions."""
    a, b = sol.system, ref_sol.system
    if a.trial.mesh is not b.trial.mesh:
        raise ValueError("solutions live on different meshes")
    rule = triangle_rule(2 * max(a.trial.degree, b.trial.degree) + 2)
    total = 0.0
    for el in _chunks(a.trial.mesh.ntriangles):
        w = _weights(a.trial, el, rule)
        fa = _x_fields(a, sol.x, el, rule.points)
        fb = _x_fields(b, ref_sol.x, el, rule.points)
        total += sum(np.einsum("eq,eq->", (u - v) ** 2, w)
                     for u, v in zip(fa, fb))
    return float(np.sqrt(total))


def error_vs_exact(sol, data, extra_degree=6):
    """X-norm distance between a trial solution and ``(grad u, u)``."""
    blocks = sol.system
    dg = blocks.trial
    rule = triangle_rule(2 * dg.degree + extra_degree)
    total = 0.0
    for el in _chunks(dg.mesh.ntriangles):
        w = _weights(dg, el, rule)
        x = dg.physical_points(el, rule.points)
        ux, uy = data.grad_u(x[..., 0], x[..., 1])
        u = data.u(x[..., 0], x[..., 1])
        fields = _x_fields(blocks, sol.x, el, rule.points)
        total += sum(np.einsum("eq,eq->", (a - b) ** 2, w)
                     for a, b in zip(fields, (ux, uy, u)))
    return float(np.sqrt(total))


def eoc(trace):
    """Observed rates ``-log(v1/v0) / log(N1/N0)`` of ``(dofs, value)`` pairs."""
    trace = [(float(n), float(v)) for n, v in trace]
    if len(trace) < 2:
        raise ValueError("need at least two points")
    if any(v <= 0 or n <= 0 for n, v in trace):
        raise ValueError("values and DOF counts must be positive")
    return [-np.log(v1 / v0) / np.log(n1 / n0)
            for (n0, v0), (n1, v1) in zip(trace[:-1], trace[1:])]


def fitted_rate(trace):
    """Least-squares slope of ``-log(value)`` against ``log(dofs)``."""
    n = np.log([t[0] for t in trace])
    v = np.log([t[1] for t in trace])
    return float(-np.polyfit(n, v, 1)[0])


def _mild_fields(rt, lag, z, el, pts):
    mu, u = z[:rt.dim], z[rt.dim:]
    d = rt.eval_basis(el, pts)
    c = rt.local_coefficients(mu, el)
    q = np.einsum("eqid,ei->eqd", d["val"], c)
    dq = np.einsum("eqi,ei->eq", d["div"], c)
    d = lag.eval_basis(el, pts)
    c = lag.local_coefficients(u, el)
    w = np.einsum("eqi,ei->eq", d["val"], c)
    gw = np.einsum("eqid,ei->eqd", d["grad"], c)
    return q, dq, w, gw


def mild_indicators(rt, lag, z, g=None, extra_degree=6):
    """Element values of the first-order least-squares functional,
    ``sqrt(||q - grad w||_T^2 + ||div q + g||_T^2)``."""
    rule = triangle_rule(2 * max(rt.degree + 1, lag.degree) + extra_degree)
    out = np.zeros(rt.mesh.ntriangles)
    for el in _chunks(rt.mesh.ntriangles):
        wts = _weights(rt, el, rule)
        q, dq, _, gw = _mild_fields(rt, lag, z, el, rule.points)
        r2 = dq
        if g is not None:
            x = rt.physical_points(el, rule.points)
            r2 = dq + g(x[..., 0], x[..., 1])
        out[el] = np.einsum("eq,eq->e", ((q - gw) ** 2).sum(-1) + r2 ** 2, wts)
    return np.sqrt(np.maximum(out, 0.0))


def mild_error_vs_exact(rt, lag, z, data, extra_degree=6):
    """``L2`` distance of ``(q, w)`` to ``(grad u, u)``."""
    rule = triangle_rule(2 * max(rt.degree + 1, lag.degree) + extra_degree)
    total = 0.0
    for el in _chunks(rt.mesh.ntriangles):
        wts = _weights(rt, el, rule)
        q, _, w, _ = _mild_fields(rt, lag, z, el, rule.points)
        x = rt.physical_points(el, rule.points)
        ux, uy = data.grad_u(x[..., 0], x[..., 1])
        u = data.u(x[..., 0], x[..., 1])
        total += np.einsum("eq,eq->", (q[..., 0] - ux) ** 2 + (q[..., 1] - uy) ** 2
                           + (w - u) ** 2, wts)
    return float(np.sqrt(total))


# ---------------------------------------------------------------------------
# discrete Helmholtz decomposition

@dataclass
class HelmholtzReport:
    dim_rt_div0: int
    dim_grad_cr: int
    dim_dg2: int
    max_cross_inner_product: float

    @property
    def additive(self):
        return self.dim_rt_div0 + self.dim_grad_cr == self.dim_dg2


def _orthonormal_columns(V, weights):
    """Orthonormal basis (weighted inner product) of the range of ``V``."""
    sw = np.sqrt(weights)[:, None]
    U, s, _ = la.svd(sw * V, full_matrices=False)
    if s.size == 0:
        return U, 0
    r = int(np.sum(s > RANK_TOL * s[0]))
    return U[:, :r], r


def helmholtz_verify(mesh):
    """Check the splitting of piecewise constant vector fields into
    divergence-free RT_0 fields (zero normal trace on Gamma_N) and broken
    gradients of CR functions (vanishing facet means on Gamma_D).

    Fields are represented by their element values, components stacked
    ``(x-values, y-values)``; the inner product is weighted by areas.
    """
    nt = mesh.ntriangles
    rt = make_space(mesh, RT, 0, NEUMANN)
    cr = make_space(mesh, CR, 1, DIRICHLET)
    centroid = np.array([[1 / 3, 1 / 3]])
    el = np.arange(nt)

    d = rt.eval_basis(el, centroid)
    val = d["val"][:, 0]                         # (nt, 3, 2)
    div = d["div"][:, 0]                         # (nt, 3)
    D = np.zeros((nt, rt.dim))
    E = np.zeros((2 * nt, rt.dim))
    for l in range(3):
        dofs = rt.dofs[:, l]
        keep = dofs >= 0
        np.add.at(D, (el[keep], dofs[keep]), div[keep, l])
        np.add.at(E, (el[keep], dofs[keep]), val[keep, l, 0])
        np.add.at(E, (el[keep] + nt, dofs[keep]), val[keep, l, 1])
    if rt.dim:
        _, s, vt = la.svd(D, full_matrices=True)
        rank = int(np.sum(s > RANK_TOL * s[0])) if s.size else 0
        null = vt[rank:].T
    else:
        null = np.zeros((0, 0))
    div0 = E @ null                              # piecewise-constant fields

    g = cr.eval_basis(el, centroid)["grad"][:, 0]  # (nt, 3, 2)
    G = np.zeros((2 * nt, cr.dim))
    for l in range(3):
        dofs = cr.dofs[:, l]
        keep = dofs >= 0
        np.add.at(G, (el[keep], dofs[keep]), g[keep, l, 0])
        np.add.at(G, (el[keep] + nt, dofs[keep]), g[keep, l, 1])

    w = np.tile(mesh.areas, 2)
    U1, r1 = _orthonormal_columns(div0, w)
    U2, r2 = _orthonormal_columns(G, w)
    cross = float(np.abs(U1.T @ U2).max()) if r1 and r2 else 0.0
    return HelmholtzReport(r1, r2, 2 * nt, cross)
