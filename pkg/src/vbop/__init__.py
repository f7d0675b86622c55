"""Variational Bayesian operator learning toolkit.

Kept import-light on purpose: the CLI pins BLAS thread counts before any
numpy-backed submodule is loaded.
"""

__version__ = "0.1.0"
