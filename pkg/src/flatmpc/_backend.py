"""Select the compiled kernels when available, else the numpy fallback.

Set ``FLATMPC_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pykernels

if os.environ.get("FLATMPC_PURE_PYTHON", "") not in ("", "0"):
    kernels = _pykernels
else:
    try:
        from . import _ckernels as kernels
    except ImportError:
        kernels = _pykernels

NAME = "cython" if kernels is not _pykernels else "python"

CONVERGED = _pykernels.CONVERGED
STOPPED = _pykernels.STOPPED
MAX_ITER = _pykernels.MAX_ITER
STALLED = _pykernels.STALLED
UNBOUNDED = _pykernels.UNBOUNDED


def available_backends():
    """Return ``{name: module}`` for every importable kernel implementation."""
    found = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        found["cython"] = _ckernels
    return found
