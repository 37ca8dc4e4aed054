"""Practical ultra-weak MINRES finite element discretisation of the Poisson
problem with discretised dual norms, plus inf-sup, estimator and adaptive
refinement tooling."""

__version__ = "0.1.0"
