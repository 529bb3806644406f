"""Hot-kernel dispatch: compiled extension if available, NumPy fallback otherwise.

Set MMPCQA_PURE_PYTHON=1 to force the NumPy backend.
"""

import os

from . import reference

if os.environ.get("MMPCQA_PURE_PYTHON"):
    _impl = reference
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = reference

fps = _impl.fps
knn_batch = _impl.knn_batch
splat = _impl.splat


def backend_name() -> str:
    return "compiled" if _impl is not reference else "numpy"
