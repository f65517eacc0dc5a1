"""Kernel backend selection.

The compiled extension is used when it was built; otherwise the numpy
fallback is used.  Set ``INTENTGUARD_PURE_PYTHON=1`` to force the fallback.
Both backends produce identical results for identical inputs.
"""

from __future__ import annotations

import os

from . import _pykernels

python_backend = _pykernels

try:
    if os.environ.get("INTENTGUARD_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-Python backend requested")
    from . import _ckernels as compiled_backend
except ImportError:
    compiled_backend = None

backend = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "cython" if compiled_backend is not None else "python"

binom_sf = backend.binom_sf
mc_exceed_counts = backend.mc_exceed_counts
evaluate_sets = backend.evaluate_sets
run_chain = backend.run_chain
