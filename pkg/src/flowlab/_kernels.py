"""Backend selection for the RK4 kernels.

numba is used when importable unless ``FLOWLAB_NO_NUMBA`` is set to a
non-empty value other than ``0``; the pure-numpy path is the fallback and
the reference the numba kernels are tested against.
"""
from __future__ import annotations

import os

from . import _kernels_numpy

RESNET, POLY = 0, 1
ACTIVATION_CODES = {"tanh": 0, "sigmoid": 1, "relu": 2, "identity": 3}


def _numba_requested() -> bool:
    flag = os.environ.get("FLOWLAB_NO_NUMBA", "")
    return flag in ("", "0")


def _load():
    if _numba_requested():
        try:
            from . import _kernels_numba

            return _kernels_numba, "numba"
        except ImportError:
            pass
    return _kernels_numpy, "numpy"


backend, BACKEND_NAME = _load()


def get_backend(name: str | None = None):
    """Return the kernel module ``name`` ("numba"/"numpy"), or the active one."""
    if name is None:
        return backend
    if name == "numpy":
        return _kernels_numpy
    if name == "numba":
        from . import _kernels_numba

        return _kernels_numba
    raise ValueError(f"unknown kernel backend {name!r}")


def forward(*args):
    return backend.forward(*args)


def variational(*args):
    return backend.variational(*args)


def adjoint(*args):
    return backend.adjoint(*args)
