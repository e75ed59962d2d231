"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy fallback.
Setting ``KRONATTN_BACKEND=python`` forces the fallback, ``=cython`` makes a
missing extension an error.
"""
import os

from . import _pykernels

_requested = os.environ.get("KRONATTN_BACKEND", "auto").lower()

if _requested == "python":
    kernels = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as kernels
        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise
        kernels = _pykernels
        BACKEND = "python"


def available_backends():
    """Map backend name to kernel module for every backend importable here."""
    found = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        found["cython"] = _ckernels
    return found
