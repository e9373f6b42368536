"""Select the kernel backend at import time.

``CVP_BACKEND=cython`` requires the compiled extension, ``python`` forces the
numpy fallback, and ``auto`` (default) uses the extension when it imports.
"""

import os

import numpy as np

from . import _kernels_py

_choice = os.environ.get("CVP_BACKEND", "auto").strip().lower()
if _choice not in ("auto", "cython", "python"):
    raise ImportError(f"CVP_BACKEND must be auto, cython or python, got {_choice!r}")

_compiled = None
if _choice != "python":
    try:
        from . import _ckernels as _compiled
    except ImportError:
        if _choice == "cython":
            raise

impl = _compiled if _compiled is not None else _kernels_py
BACKEND = "cython" if _compiled is not None else "python"

gaussian_pair_derivs = impl.gaussian_pair_derivs
lattice_pair_derivs = impl.lattice_pair_derivs


def scatter_blocks(out, I, J, coef, B):
    """Dispatch to the selected backend with the dtypes it expects."""
    impl.scatter_blocks(out, _idx(I), _idx(J), _f64(coef), _f64(B))


def scatter_diag_blocks(out, I, coef, B):
    """Dispatch to the selected backend with the dtypes it expects."""
    impl.scatter_diag_blocks(out, _idx(I), _f64(coef), _f64(B))


def _idx(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)
