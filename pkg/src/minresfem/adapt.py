"""Dörfler marking and the solve-estimate-mark-refine loop."""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .analysis import (error_estimator, error_vs_reference, infsup_gamma,
                       mild_error_vs_exact, mild_indicators)
from .assembly import mild_fosls_system, ultraweak_system
from .config import ADAPTIVE, MILD, ExperimentConfig
from .fespace import DG, LAGRANGE, RT, make_space, reference_element
from .mesh import DIRICHLET, NEUMANN, bisect, initial_square_mesh, uniform_refine
from .problems import preset
from .solve import Factorization, SolverError, solve_saddle, sparse_solve

log = logging.getLogger(__name__)

CONVERGED_TOL = 1e-10


class AdaptError(RuntimeError):
    """Numerical failure inside the refinement loop; ``level`` says where."""

    def __init__(self, level, cause):
        super().__init__(f"level {level}: {cause}")
        self.level = level
        self.cause = cause


# ---------------------------------------------------------------------------
# marking

@dataclass(frozen=True)
class MarkSet:
    elements: np.ndarray
    converged: bool = False

    def __len__(self):
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements.tolist())

    def __contains__(self, i):
        return i in set(self.elements.tolist())


def doerfler_mark(indicators, theta):
    """Smallest set carrying a ``theta`` fraction of ``sum eta_T**2``.

    Greedy over indicators sorted decreasingly, ties broken by the lower
    element index.  Returns the marked indices in increasing order.
    """
    eta = np.asarray(indicators, dtype=float)
    if eta.ndim != 1:
        raise ValueError("indicators must be a vector")
    if not np.all(np.isfinite(eta)) or np.any(eta < 0):
        raise ValueError("indicators must be finite and nonnegative")
    if not 0 < theta <= 1:
        raise ValueError("theta must lie in (0, 1]")
    eta2 = eta ** 2
    if eta2.sum() == 0:
        return MarkSet(np.zeros(0, dtype=np.int64), converged=True)
    order = np.lexsort((np.arange(eta.size), -eta2))
    cs = np.cumsum(eta2[order])
    k = int(np.searchsorted(cs, theta * cs[-1], side="left")) + 1
    return MarkSet(np.sort(order[:min(k, eta.size)]))


# ---------------------------------------------------------------------------
# traces

@dataclass
class TraceRecord:
    level: int
    ntri: int
    dofs_x: int
    estimator: float
    gamma_tilde: Optional[float] = None
    err_ref: Optional[float] = None

    def __post_init__(self):
        for name in ("estimator", "gamma_tilde", "err_ref"):
            v = getattr(self, name)
            if v is not None and not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")


@dataclass
class AdaptiveTrace:
    records: List[TraceRecord] = field(default_factory=list)
    converged: bool = False

    def append(self, rec):
        if self.records and rec.dofs_x <= self.records[-1].dofs_x:
            raise ValueError("DOF counts must increase strictly along a trace")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def column(self, name):
        return [getattr(r, name) for r in self.records]

    def pairs(self, name):
        """``(dofs_x, value)`` pairs of a column, skipping blanks."""
        return [(r.dofs_x, getattr(r, name)) for r in self.records
                if getattr(r, name) is not None]


# ---------------------------------------------------------------------------
# one level

def trial_dofs(mesh, config):
    p = config.trial_degree
    if config.formulation == MILD:
        return (make_space(mesh, RT, p, NEUMANN).dim
                + make_space(mesh, LAGRANGE, p + 1, DIRICHLET).dim)
    return 3 * reference_element(DG, p).ndof * mesh.ntriangles


def _ultraweak_level(mesh, config, data):
    blocks = ultraweak_system(mesh, config.trial_degree, data, config.test_shift)
    sol = solve_saddle(blocks)
    report = error_estimator(sol)
    # estimator of the zero trial function, ||f||_{A^-1}
    scale = float(np.sqrt(max(blocks.f @ Factorization(blocks.A).solve(blocks.f), 0.0)))
    gamma = err = None
    if config.compute_gamma:
        gamma = infsup_gamma(blocks.A, blocks.B, blocks.MX).gamma_tilde
    if config.compute_reference:
        ref = solve_saddle(ultraweak_system(mesh, config.reference_degree, data, 1))
        err = error_vs_reference(sol, ref)
    return blocks.dim_x, report.indicators, scale, gamma, err


def _mild_level(mesh, config, data):
    p = config.trial_degree
    rt = make_space(mesh, RT, p, NEUMANN)
    lag = make_space(mesh, LAGRANGE, p + 1, DIRICHLET)
    K, rhs = mild_fosls_system(rt, lag, data.g, data.h_d, data.h_n)
    z = sparse_solve(K, rhs, spd=True)
    eta = mild_indicators(rt, lag, z, data.g)
    err = mild_error_vs_exact(rt, lag, z, data) if config.compute_reference else None
    scale = float(np.linalg.norm(mild_indicators(rt, lag, np.zeros_like(z), data.g)))
    return rt.dim + lag.dim, eta, scale, None, err


def adaptive_loop(config: ExperimentConfig, on_record: Optional[Callable] = None,
                  mesh=None):
    """Run the refinement study described by ``config``.

    Each level is solved, estimated and recorded; the next mesh comes from
    Dörfler marking plus bisection (adaptive) or a uniform refinement.
    The loop ends before the first level whose trial dimension exceeds
    ``config.dof_budget``; the initial level is always computed.
    An adaptive run also stops once the estimator vanishes relative to that
    of the zero trial function (``trace.converged``).  ``on_record`` is called with every new
    :class:`TraceRecord`.
    """
    data = preset(config.data)
    mesh = initial_square_mesh(data.gamma_n) if mesh is None else mesh
    level_fn = _mild_level if config.formulation == MILD else _ultraweak_level
    trace = AdaptiveTrace()
    level = 0
    while True:
        try:
            dofs, eta, scale, gamma, err = level_fn(mesh, config, data)
        except SolverError as exc:
            raise AdaptError(level, exc) from exc
        est = float(np.sqrt(np.sum(eta ** 2)))
        rec = TraceRecord(level, mesh.ntriangles, dofs, est, gamma, err)
        trace.append(rec)
        log.info("level %d ntri=%d dofs_x=%d estimator=%.4e", level,
                 mesh.ntriangles, dofs, est)
        if on_record is not None:
            on_record(rec)
        if est <= CONVERGED_TOL * scale:
            # nothing left to mark; uniform sweeps still run to the budget
            trace.converged = True
            if config.refinement == ADAPTIVE:
                break
        if config.refinement == ADAPTIVE:
            nxt = bisect(mesh, doerfler_mark(eta, config.theta).elements)
        else:
            nxt = uniform_refine(mesh)
        if trial_dofs(nxt, config) > config.dof_budget:
            break
        mesh = nxt
        level += 1
    return trace
