"""Grid kernels with a compiled fast path and a pure-numpy fallback.

The compiled extension is preferred when importable; set the environment
variable ``SATKIT_PURE_PYTHON=1`` to force the fallback. Both backends are
bit-equal by construction (see ``tests/test_kernels.py``).
"""

import os

from . import gridcore_py

if os.environ.get("SATKIT_PURE_PYTHON"):
    _backend = gridcore_py
else:
    try:
        from . import _gridcore as _backend  # type: ignore[no-redef]
    except ImportError:
        _backend = gridcore_py

COMPILED = _backend is not gridcore_py
BACKEND_NAME = "compiled" if COMPILED else "python"

rasterize_scale_map = _backend.rasterize_scale_map
pool_background_mask = _backend.pool_background_mask
