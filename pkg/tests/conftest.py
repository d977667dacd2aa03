import os

# Single-threaded BLAS: threading overhead dominates at these matrix sizes,
# and it keeps every numeric result bit-reproducible across machines.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

try:
    from threadpoolctl import threadpool_limits
    threadpool_limits(1)
except ImportError:
    pass
