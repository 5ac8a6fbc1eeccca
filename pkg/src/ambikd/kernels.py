"""Row-kernel dispatch.

Uses the compiled ``_ckernels`` extension when it is importable and falls back
to the numpy implementations otherwise. Set ``AMBIKD_PURE_PYTHON=1`` to force
the fallback (the benchmark and the parity tests do this per call instead via
:func:`use_backend`).
"""
import os

import numpy as np

from . import _kernels_py

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_NAMES = ("softmax_rows", "softmax_rows_backward", "layernorm_rows",
          "layernorm_rows_backward", "gelu", "gelu_backward")

BACKEND = None


def available_backends():
    return ["compiled", "python"] if _ckernels is not None else ["python"]


def use_backend(name):
    """Bind the module-level kernel functions to ``name`` ('compiled' or 'python')."""
    global BACKEND
    if name == "compiled":
        if _ckernels is None:
            raise RuntimeError("compiled kernels are not built; run `pip install -e .`")
        src = _ckernels
    elif name == "python":
        src = _kernels_py
    else:
        raise ValueError(f"unknown backend {name!r}")
    g = globals()
    for fn in _NAMES:
        g[fn] = getattr(src, fn)
    BACKEND = name


def as_rows(a):
    """View ``a`` as a C-contiguous 2-D array (rows, last-dim)."""
    return np.ascontiguousarray(a.reshape(-1, a.shape[-1]))


use_backend("python" if (_ckernels is None or os.environ.get("AMBIKD_PURE_PYTHON") == "1")
            else "compiled")
