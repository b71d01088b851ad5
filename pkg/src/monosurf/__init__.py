"""monosurf: single-image regression of deforming 3D surface grids.

Everything runs on the CPU: a small reverse-mode autodiff engine, an
encoder-decoder surface regressor, geometric losses (3D, smoothing prior,
soft contour), a synthetic isometric-deformation dataset generator with a
software renderer, and training/evaluation tooling behind a CLI.
"""

__version__ = "0.1.0"

import os as _os

# MONOSURF_THREADS caps BLAS threading; must land before numpy's first import
_threads = _os.environ.get("MONOSURF_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)
del _os, _threads

from ._backend import BACKEND_NAME as kernel_backend  # noqa: F401,E402
