"""Backend selection for the hot kernels.

The compiled ``_core`` extension is used when it imports; otherwise the
numpy twin in ``_pycore``. Set ``ISMP_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pycore

if os.environ.get("ISMP_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pycore
else:
    try:
        from . import _core as _impl
    except ImportError:  # extension not built
        _impl = _pycore

BACKEND = _impl.BACKEND

fps = _impl.fps
knn_brute = _impl.knn_brute
spfh = _impl.spfh
zbuffer_min = _impl.zbuffer_min


def available_backends():
    """Return ``{name: module}`` for every importable backend."""
    out = {"python": _pycore}
    try:
        from . import _core
    except ImportError:
        pass
    else:
        out["cython"] = _core
    return out
