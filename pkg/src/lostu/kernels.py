"""Backend selection for the batch triangulation kernels.

The compiled Cython module is used when it imports; otherwise, or when the
environment variable ``LOSTU_PURE_PYTHON`` is set to a non-empty value other
than ``0``, the numpy implementation is used. Both expose ``ranges``,
``midpoint``, ``dlt``, ``lost`` and ``lostu`` with identical signatures.
"""

import os

from . import _pykernels

OK, PARALLAX, NO_SOURCES = 0, 1, 2

_force_python = os.environ.get("LOSTU_PURE_PYTHON", "") not in ("", "0")

if _force_python:
    _active = _pykernels
else:
    try:
        from . import _ckernels as _active
    except ImportError:  # extension not built
        _active = _pykernels

BACKEND = _active.BACKEND


def get_backend(name=None):
    """Return a kernel module: ``"cython"``, ``"python"`` or the active one."""
    if name is None:
        return _active
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


def compiled_available():
    try:
        from . import _ckernels  # noqa: F401
    except ImportError:
        return False
    return True


ranges = _active.ranges
midpoint = _active.midpoint
dlt = _active.dlt
lost = _active.lost
lostu = _active.lostu
