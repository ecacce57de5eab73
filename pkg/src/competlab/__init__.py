"""Numerical laboratory for strongly competing variable-coefficient elliptic systems."""
import os

# COMPETLAB_THREADS caps BLAS threads; it only takes effect before numpy loads.
_threads = os.environ.get("COMPETLAB_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
