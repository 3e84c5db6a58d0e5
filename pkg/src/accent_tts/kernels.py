"""Hot-loop kernels with a compiled core and a pure-Python fallback.

The compiled extension is used when it imports; set ``ACCENT_TTS_PURE_PYTHON=1``
to force the fallback (the benchmark and the equivalence tests do this per call
through :func:`get_backend`).
"""
import os

import numpy as np

from . import _kernels_py

try:
    if os.environ.get("ACCENT_TTS_PURE_PYTHON"):
        raise ImportError("pure-python backend forced")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"
_active = _compiled if _compiled is not None else _kernels_py


def get_backend(name=None):
    """Return the kernel module for ``name`` ("compiled", "python" or None for active)."""
    if name is None:
        return _active
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not available in this build")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def dtw_path(cost):
    return _active.dtw_path(_c(cost))


def gru_forward(xproj, U, b_hh, h0):
    return _active.gru_forward(_c(xproj), _c(U), _c(b_hh), _c(h0))


def gru_backward(dhs, h0, hs, cache, U):
    return _active.gru_backward(_c(dhs), _c(h0), hs, cache, _c(U))
