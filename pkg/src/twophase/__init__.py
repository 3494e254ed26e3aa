"""Multi-wave two-phase validation sampling toolkit.

Submodules
----------
records     domain types and the multi-wave design ledger
fpca        sparse functional PCA (PACE) and exposure derivation
models      weighted Cox / logistic fits with influence functions
allocation  Neyman, multi-wave, and exact integer allocation
raking      IPW and generalized-raking estimation
multiframe  Hansen-Hurwitz combination of two sampling frames
imputation  parametric imputation and multiply-imputed influence
simulate    synthetic populations, oracles, and the experiment harness
fileio      CSV/JSON schemas for every artifact
cli         the ``twophase`` command-line entry point
"""

__version__ = "0.1.0"

from twophase.kernels import BACKEND as KERNEL_BACKEND  # noqa: F401
