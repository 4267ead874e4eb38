"""Hot inner loops with a compiled backend and a pure-Python fallback.

The Cython extension is used when it was built (``pip install -e .``);
otherwise, or when ``DESKNMT_PURE_PYTHON=1`` is set, the fallback is used.
``BACKEND`` names the active implementation.
"""

import os

from . import _pykernels as python_backend

compiled_backend = None
if os.environ.get("DESKNMT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled_backend
    except ImportError:
        compiled_backend = None

_active = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "cython" if _active is compiled_backend else "python"

merge_pair = _active.merge_pair
apply_merges = _active.apply_merges
count_ascending = _active.count_ascending

__all__ = [
    "BACKEND",
    "merge_pair",
    "apply_merges",
    "count_ascending",
    "python_backend",
    "compiled_backend",
]
