import os

# small-GEMM workloads here run fastest on a single BLAS thread
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

from promp_rrl._threads import limit_blas_threads

limit_blas_threads(1)
