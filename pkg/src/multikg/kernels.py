"""Hot-kernel backend selection.

The compiled extension is used when importable; set ``MULTIKG_PURE_PYTHON=1``
to force the numpy fallback.  ``BACKEND`` names the active implementation.
"""
import os

from . import _kernels_py

if os.environ.get("MULTIKG_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = "compiled" if _impl is not _kernels_py else "python"

L1, L2, L2SQ, CMOD = _kernels_py.L1, _kernels_py.L2, _kernels_py.L2SQ, _kernels_py.CMOD
SGD, ADAGRAD = _kernels_py.SGD, _kernels_py.ADAGRAD

distance_scores = _impl.distance_scores
transe_batch_update = _impl.transe_batch_update


def available_backends():
    """Module objects for every importable backend, keyed by name."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels
        out["compiled"] = _kernels
    except ImportError:
        pass
    return out
