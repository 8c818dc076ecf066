"""Numerical laboratory for the non-abelian X-ray transform on the Euclidean
unit ball: chord geometry, band-limited matrix potentials, matrix transport
solvers, quantitative estimate checks, boundary-symbol quadrature and a
Bayesian reconstruction experiment."""

from . import bayes, cli, estimates, fields, geometry, normalop, transport  # noqa: F401

__version__ = "0.1.0"
