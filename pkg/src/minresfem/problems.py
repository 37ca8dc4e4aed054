"""Data presets for the model Poisson problem on the unit square."""
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass(frozen=True)
class ProblemData:
    """Boundary value problem ``-Laplace u = g``, ``u = h_d`` on Gamma_D,
    ``grad u . n = h_n`` on Gamma_N.  Callables take coordinate arrays."""

    name: str
    gamma_n: tuple
    g: Optional[Callable] = None
    h_d: Optional[Callable] = None
    h_n: Optional[Callable] = None
    u: Optional[Callable] = None          # exact solution, if known
    grad_u: Optional[Callable] = None     # returns (u_x, u_y)


def paper_corner():
    """``g = 0``, ``h_D = cos(pi x / 2)``, ``h_N = 1`` with Gamma_N = {0} x [0, 1].

    The incompatible Dirichlet/Neumann data create singularities at
    (0, 0) and (0, 1).
    """
    return ProblemData(
        name="paper-corner",
        gamma_n=("left",),
        h_d=lambda x, y: np.cos(0.5 * np.pi * x),
        h_n=lambda x, y: np.ones_like(x),
    )


def manufactured_smooth():
    """``u = sin(pi x) sin(pi y)`` with homogeneous Dirichlet data."""
    pi = np.pi
    return ProblemData(
        name="manufactured-smooth",
        gamma_n=(),
        g=lambda x, y: 2 * pi ** 2 * np.sin(pi * x) * np.sin(pi * y),
        u=lambda x, y: np.sin(pi * x) * np.sin(pi * y),
        grad_u=lambda x, y: (pi * np.cos(pi * x) * np.sin(pi * y),
                             pi * np.sin(pi * x) * np.cos(pi * y)),
    )


PRESETS = {"paper-corner": paper_corner,
           "manufactured-smooth": manufactured_smooth}


def preset(name):
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown data preset {name!r}") from None
