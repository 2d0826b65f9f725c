"""Cap BLAS threadpools at runtime.

The networks here are small (batch 100, width 128); OpenBLAS multi-threading
on such GEMMs costs more in synchronization than it saves, and experiment
trials are parallelized one process per trial anyway.
"""

from __future__ import annotations

import ctypes
import glob
import os


def limit_blas_threads(n: int = 1) -> bool:
    """Best-effort: pin OpenBLAS to ``n`` threads. Returns True on success."""
    os.environ.setdefault("OPENBLAS_NUM_THREADS", str(n))
    os.environ.setdefault("OMP_NUM_THREADS", str(n))
    try:
        import numpy as np

        libs_dir = os.path.join(os.path.dirname(os.path.dirname(np.__file__)), "numpy.libs")
        candidates = glob.glob(os.path.join(libs_dir, "*openblas*.so*"))
        for path in candidates:
            lib = ctypes.CDLL(path)
            for name in (
                "scipy_openblas_set_num_threads64_",
                "openblas_set_num_threads64_",
                "openblas_set_num_threads",
            ):
                fn = getattr(lib, name, None)
                if fn is not None:
                    fn(ctypes.c_int(n))
                    return True
    except Exception:
        pass
    return False
