"""Backend selection for the hot kernels.

The compiled extension is preferred. Set ``SEQEMBED_PURE_PYTHON=1`` to force
the numpy fallback.
"""

import os
from contextlib import contextmanager

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("SEQEMBED_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "compiled"


def available_backends():
    names = ["python"]
    try:
        from . import _kernels  # noqa: F401
    except ImportError:
        return names
    return ["compiled"] + names


def get_backend(name: str | None = None):
    """Return the kernel module for ``name`` (default: the active backend)."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "compiled":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown backend {name!r}")


@contextmanager
def use_backend(name: str):
    """Temporarily route every kernel call to backend ``name``."""
    global _impl, BACKEND
    saved = _impl, BACKEND
    _impl, BACKEND = get_backend(name), name
    try:
        yield
    finally:
        _impl, BACKEND = saved


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def lstm_cell_forward(z, c_prev):
    return _impl.lstm_cell_forward(_c(z), _c(c_prev))


def lstm_cell_backward(dh, dc, gates, c_prev, tc):
    return _impl.lstm_cell_backward(_c(dh), _c(dc), _c(gates), _c(c_prev), _c(tc))


def squared_distances(vectors, query):
    return _impl.squared_distances(_c(vectors), _c(query))


def col2im_add(dcols, stride: int, t_in: int):
    return _impl.col2im_add(_c(dcols), int(stride), int(t_in))
