"""Desk-scale behavior foundation model pipeline on a planar 7-link humanoid.

Training and evaluation entry points are deterministic for a fixed seed on a
single machine; BLAS thread counts are pinned (unless already set) because
multi-threaded reductions are the one source of run-to-run drift.
"""

import os as _os

for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    _os.environ.setdefault(_var, "1")

__version__ = "0.1.0"
