"""Numerical laboratory for Perelman's nu-entropy and the linear stability of
gradient shrinking Ricci solitons on structured grids.

Submodules: grids, derivatives, curvature, models, entropy, identities,
variations, stability, solvers, galerkin, cli.
"""
__version__ = "0.1.0"
