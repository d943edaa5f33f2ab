"""Backend selection for the hot sampling loops.

The compiled extension is used when it imports; set ``CGMC_BACKEND=python``
to force the pure-Python twin (``CGMC_BACKEND=cython`` makes a missing
extension an error instead of a silent fallback).
"""
import os

from . import _pykernels

_requested = os.environ.get("CGMC_BACKEND", "").strip().lower()

if _requested == "python":
    backend = _pykernels
else:
    try:
        from . import _ckernels as backend
    except ImportError:
        if _requested == "cython":
            raise
        backend = _pykernels

BACKEND = backend.NAME
BACKENDS = {"python": _pykernels}
if BACKEND == "cython":
    BACKENDS["cython"] = backend
else:
    try:
        from . import _ckernels

        BACKENDS["cython"] = _ckernels
    except ImportError:
        pass


def get(name: str | None = None):
    """Kernel module by name; ``None`` gives the import-time selection."""
    if name is None:
        return backend
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} is not available (have {sorted(BACKENDS)})") from None
