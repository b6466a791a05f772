import os

# Pin BLAS to one thread before numpy loads: keeps runs deterministic and
# honest about the single-core time budget used by the acceptance suite.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
