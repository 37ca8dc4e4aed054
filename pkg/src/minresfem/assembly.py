"""Assembly of Gram matrices, the ultra-weak coupling operator and the
right-hand side functionals.

Element integrals are evaluated with quadrature that is exact for the
polynomial integrands (affine elements), then scattered as (row, col,
value) triplets in deterministic element order.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.sparse as sp

from .fespace import CR, DG, LAGRANGE, RT, edge_points
from .mesh import DIRICHLET, NEUMANN
from .quadrature import edge_rule, triangle_rule

CHUNK = 2048


class AssemblyError(ValueError):
    """Incompatible spaces or unsupported request."""


def _chunks(n):
    for start in range(0, n, CHUNK):
        yield np.arange(start, min(start + CHUNK, n))


def _weights(space, elements, rule):
    return rule.weights[None, :] * 2.0 * space.mesh.areas[elements][:, None]


class _Triplets:
    def __init__(self, shape):
        self.shape = shape
        self.rows, self.cols, self.vals = [], [], []

    def add(self, rdofs, cdofs, local):
        ne, ni, nj = local.shape
        r = np.broadcast_to(rdofs[:, :, None], (ne, ni, nj))
        c = np.broadcast_to(cdofs[:, None, :], (ne, ni, nj))
        keep = (r >= 0) & (c >= 0)
        self.rows.append(r[keep])
        self.cols.append(c[keep])
        self.vals.append(local[keep])

    def tocsr(self):
        if not self.rows:
            return sp.csr_matrix(self.shape)
        M = sp.coo_matrix((np.concatenate(self.vals),
                           (np.concatenate(self.rows),
                            np.concatenate(self.cols))), shape=self.shape)
        return M.tocsr()


def _value_degree(space):
    # polynomial degree of the basis values
    return space.degree + 1 if space.family == RT else space.degree


def element_matrices(space, kind, quad_degree=None):
    """Local matrices ``(nt, nloc, nloc)`` of an inner product.

    ``kind`` is ``"l2"``, ``"h1"`` (gradient plus mass) or ``"hdiv"``.
    """
    deg = _value_degree(space)
    rule = triangle_rule(quad_degree if quad_degree is not None else 2 * deg)
    nt = space.mesh.ntriangles
    out = np.empty((nt, space.ref.ndof, space.ref.ndof))
    for el in _chunks(nt):
        d = space.eval_basis(el, rule.points)
        w = _weights(space, el, rule)
        v = d["val"]
        if v.ndim == 4:
            loc = np.einsum("eqid,eqjd,eq->eij", v, v, w)
        else:
            loc = np.einsum("eqi,eqj,eq->eij", v, v, w)
        if kind == "h1":
            loc += np.einsum("eqid,eqjd,eq->eij", d["grad"], d["grad"], w)
        elif kind == "hdiv":
            loc += np.einsum("eqi,eqj,eq->eij", d["div"], d["div"], w)
        elif kind != "l2":
            raise AssemblyError(f"unknown inner product {kind!r}")
        out[el] = loc
    return out


def _assemble_local(space, local):
    trip = _Triplets((space.dim, space.dim))
    trip.add(space.dofs, space.dofs, local)
    return trip.tocsr()


def gram_l2(space, quad_degree=None):
    """L2 Gram matrix (vector dot product for RT)."""
    return _assemble_local(space, element_matrices(space, "l2", quad_degree))


def gram_h1(space, quad_degree=None):
    """Full H1 inner product; broken gradients for CR and DG."""
    if space.family == RT:
        raise AssemblyError("H1 Gram requires a scalar family")
    return _assemble_local(space, element_matrices(space, "h1", quad_degree))


def gram_hdiv(space, quad_degree=None):
    """H(div) inner product ``(q, r) + (div q, div r)``."""
    if space.family != RT:
        raise AssemblyError("H(div) Gram requires an RT space")
    return _assemble_local(space, element_matrices(space, "hdiv", quad_degree))


def element_loads(space, target, quad_degree):
    """Vector of ``int target * phi_i``; ``target(x, y)`` is vectorized.

    For RT spaces ``target`` returns a pair of component arrays.
    """
    rule = triangle_rule(quad_degree)
    b = np.zeros(space.dim)
    for el in _chunks(space.mesh.ntriangles):
        x = space.physical_points(el, rule.points)
        val = target(x[..., 0], x[..., 1])
        d = space.eval_basis(el, rule.points)["val"]
        w = _weights(space, el, rule)
        if d.ndim == 4:
            val = np.stack(np.broadcast_arrays(*val), axis=-1)
            loc = np.einsum("eqid,eqd,eq->ei", d, val, w)
        else:
            loc = np.einsum("eqi,eq,eq->ei", d, np.broadcast_to(val, w.shape), w)
        dofs = space.dofs[el]
        keep = dofs >= 0
        np.add.at(b, dofs[keep], loc[keep])
    return b


def x_gram(dg):
    """Gram matrix of ``X = DG^2 x DG`` with blocks ``(q1, q2, w)``."""
    M = gram_l2(dg)
    return sp.block_diag([M, M, M], format="csr")


def ultraweak_operator(dg, rt, lag):
    """Coupling matrix of the ultra-weak bilinear form.

    ``B[y, x] = int q.mu + w div mu + q.grad lambda`` with trial
    ``x = (q1, q2, w)`` in ``DG^3`` and test ``y = (mu, lambda)`` in
    ``RT x Lagrange``.  Returned shape ``(dim_RT + dim_Lag, 3 dim_DG)``.
    """
    if not (dg.mesh is rt.mesh is lag.mesh):
        raise AssemblyError("trial and test spaces live on different meshes")
    if dg.family != DG or rt.family != RT or lag.family not in (LAGRANGE, CR):
        raise AssemblyError("expected (DG, RT, Lagrange) spaces")
    n = dg.dim
    nrt = rt.dim
    deg = dg.degree + max(rt.degree + 1, lag.degree)
    rule = triangle_rule(deg)
    trip = _Triplets((nrt + lag.dim, 3 * n))
    for el in _chunks(dg.mesh.ntriangles):
        w = _weights(dg, el, rule)
        phi = dg.eval_basis(el, rule.points)["val"]
        mu = rt.eval_basis(el, rule.points)
        gl = lag.eval_basis(el, rule.points)["grad"]
        ddof = dg.dofs[el]
        rdof = rt.dofs[el]
        ldof = np.where(lag.dofs[el] >= 0, lag.dofs[el] + nrt, -1)
        for c in range(2):
            xdof = ddof + c * n
            trip.add(rdof, xdof,
                     np.einsum("eqi,eqj,eq->eij", mu["val"][..., c], phi, w))
            trip.add(ldof, xdof,
                     np.einsum("eqi,eqj,eq->eij", gl[..., c], phi, w))
        trip.add(rdof, ddof + 2 * n,
                 np.einsum("eqi,eqj,eq->eij", mu["div"], phi, w))
    return trip.tocsr()


def _boundary_integral(space, facets, data, degree, normal=False):
    """``int_F data * phi`` (``phi . n`` if ``normal``) over given facets."""
    b = np.zeros(space.dim)
    if len(facets) == 0 or data is None:
        return b
    mesh = space.mesh
    rule = edge_rule(degree)
    elems = mesh.facet_elements[facets, 0]
    local = mesh.facet_local[facets, 0]
    lengths = mesh.facet_lengths()[facets]
    normals = mesh.facet_normals()[facets]
    for k in range(3):
        sel = local == k
        if not sel.any():
            continue
        el = elems[sel]
        ref = edge_points(k, rule.points)
        x = space.physical_points(el, ref)
        g = np.broadcast_to(data(x[..., 0], x[..., 1]), x.shape[:2])
        v = space.eval_basis(el, ref)["val"]
        if normal:
            v = np.einsum("eqid,ed->eqi", v, normals[sel])
        w = rule.weights[None, :] * lengths[sel][:, None]
        loc = np.einsum("eqi,eq,eq->ei", v, g, w)
        dofs = space.dofs[el]
        keep = dofs >= 0
        np.add.at(b, dofs[keep], loc[keep])
    return b


def ultraweak_rhs(rt, lag, g=None, h_d=None, h_n=None, data_allowance=6):
    """Right-hand side ``f(mu, lambda)``.

    ``f = int_{Gamma_D} h_D mu.n + int g lambda + int_{Gamma_N} h_N lambda``.
    ``g`` is an L2 density; all data are vectorized callables or ``None``.
    """
    mesh = rt.mesh
    f_mu = _boundary_integral(rt, mesh.facets_tagged(DIRICHLET), h_d,
                              rt.degree + data_allowance, normal=True)
    f_lam = _boundary_integral(lag, mesh.facets_tagged(NEUMANN), h_n,
                               lag.degree + data_allowance)
    if g is not None:
        f_lam = f_lam + element_loads(lag, g, lag.degree + data_allowance)
    return np.concatenate([f_mu, f_lam])


def mild_fosls_system(rt, lag, g=None, h_d=None, h_n=None, data_allowance=6):
    """Normal equations of ``min 1/2 ||q - grad w||^2 + 1/2 ||div q + g||^2``.

    Trial space ``rt x lag`` (zero normal trace on Gamma_N, zero trace on
    Gamma_D).  Only homogeneous boundary data are supported.
    """
    if h_d is not None or h_n is not None:
        raise AssemblyError("mild formulation supports homogeneous boundary data only")
    if rt.family != RT or lag.family != LAGRANGE:
        raise AssemblyError("expected (RT, Lagrange) trial spaces")
    deg = 2 * max(rt.degree + 1, lag.degree)
    rule = triangle_rule(deg)
    n = rt.dim
    trip = _Triplets((n + lag.dim, n + lag.dim))
    for el in _chunks(rt.mesh.ntriangles):
        w = _weights(rt, el, rule)
        q = rt.eval_basis(el, rule.points)
        gl = lag.eval_basis(el, rule.points)["grad"]
        rd = rt.dofs[el]
        ld = np.where(lag.dofs[el] >= 0, lag.dofs[el] + n, -1)
        qq = (np.einsum("eqid,eqjd,eq->eij", q["val"], q["val"], w)
              + np.einsum("eqi,eqj,eq->eij", q["div"], q["div"], w))
        qg = -np.einsum("eqid,eqjd,eq->eij", q["val"], gl, w)
        gg = np.einsum("eqid,eqjd,eq->eij", gl, gl, w)
        trip.add(rd, rd, qq)
        trip.add(rd, ld, qg)
        trip.add(ld, rd, qg.transpose(0, 2, 1))
        trip.add(ld, ld, gg)
    K = trip.tocsr()
    rhs = np.zeros(n + lag.dim)
    if g is not None:
        rule = triangle_rule(rt.degree + data_allowance)
        for el in _chunks(rt.mesh.ntriangles):
            x = rt.physical_points(el, rule.points)
            gv = np.broadcast_to(g(x[..., 0], x[..., 1]), x.shape[:2])
            dv = rt.eval_basis(el, rule.points)["div"]
            loc = -np.einsum("eqi,eq,eq->ei", dv, gv, _weights(rt, el, rule))
            dofs = rt.dofs[el]
            keep = dofs >= 0
            np.add.at(rhs, dofs[keep], loc[keep])
    return K, rhs


@dataclass
class SystemBlocks:
    """Discrete ultra-weak system.

    ``A`` is the Y-Gram (block diagonal H(div) x H1), ``B`` the coupling
    matrix, ``f`` the right-hand side and ``MX`` the X-Gram.
    """

    A: sp.csr_matrix
    B: sp.csr_matrix
    f: np.ndarray
    MX: sp.csr_matrix
    trial: object = None          # DG space of each of the 3 X components
    test: tuple = ()              # (RT space, Lagrange space)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ny, nx = self.B.shape
        if self.A.shape != (ny, ny) or self.MX.shape != (nx, nx) \
                or self.f.shape != (ny,):
            raise AssemblyError("inconsistent block dimensions")

    @property
    def dim_x(self):
        return self.B.shape[1]

    @property
    def dim_y(self):
        return self.B.shape[0]

    def split_y(self, y):
        """Split test coefficients into ``(mu, lambda)``."""
        n = self.test[0].dim
        return y[:n], y[n:]

    def split_x(self, x):
        """Split trial coefficients into ``(q1, q2, w)``."""
        n = self.trial.dim
        return x[:n], x[n:2 * n], x[2 * n:]


def ultraweak_spaces(mesh, p, test_shift=0):
    """Trial DG_p and test ``RT_{p+s} x S0_{2+p+s}`` spaces (s = test_shift)."""
    from .fespace import make_space
    dg = make_space(mesh, DG, p)
    rt = make_space(mesh, RT, p + test_shift, NEUMANN)
    lag = make_space(mesh, LAGRANGE, 2 + p + test_shift, DIRICHLET)
    return dg, rt, lag


def ultraweak_system(mesh, p, data, test_shift=0):
    """Assemble all blocks of the practical ultra-weak MINRES system.

    ``data`` provides ``g``, ``h_d`` and ``h_n`` attributes (callables or
    ``None``).
    """
    dg, rt, lag = ultraweak_spaces(mesh, p, test_shift)
    A = sp.block_diag([gram_hdiv(rt), gram_h1(lag)], format="csr")
    B = ultraweak_operator(dg, rt, lag)
    f = ultraweak_rhs(rt, lag, data.g, data.h_d, data.h_n)
    return SystemBlocks(A, B, f, x_gram(dg), dg, (rt, lag),
                        {"p": p, "test_shift": test_shift})


def export_matrix(M, path):
    """Write a sparse matrix in MatrixMarket coordinate format."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(M))
