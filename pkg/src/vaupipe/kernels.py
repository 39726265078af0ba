"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the pure-Python
module takes over. Set ``VAUPIPE_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

_impl = _kernels_py if os.environ.get("VAUPIPE_PURE_PYTHON") or _compiled is None else _compiled
BACKEND = "python" if _impl is _kernels_py else "cython"

solve_assignment = _impl.solve_assignment
convolve_reflect = _impl.convolve_reflect
local_extrema = _impl.local_extrema
