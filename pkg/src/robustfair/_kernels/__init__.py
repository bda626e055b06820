"""Numeric kernels with a compiled fast path and a pure-NumPy fallback.

The compiled extension (`robustfair._kernels._core`) is built from Cython at
install time when a C compiler is available.  Importing this package picks
the extension when it loaded cleanly and silently falls back to the NumPy
reference implementation otherwise.  Setting the environment variable
``ROBUSTFAIR_PURE_PYTHON=1`` forces the fallback, which is handy for
debugging and for benchmarking the two backends against each other.

Both backends expose the same callables with identical semantics:

- ``envelope_min_descent``: multi-start subgradient descent on a pointwise
  maximum of quadratics.
- ``profile_best_t_batch``: exact inner maximization of the rank-one attack
  profiles over the group-1 budget split, batched over models.
- ``piece_value_grad`` / ``gda_saddle``: smooth saddle pieces of the
  rank-one defense and the projected gradient descent-ascent inner loop.
"""

from __future__ import annotations

import os

if os.environ.get("ROBUSTFAIR_PURE_PYTHON", "") not in ("", "0"):
    from . import _core_py as _backend
else:
    try:
        from . import _core as _backend  # type: ignore[attr-defined]
    except ImportError:
        from . import _core_py as _backend

from ._core_py import VARIANT_INFLATE, VARIANT_KINK_G1, VARIANT_KINK_G2

BACKEND_NAME = "compiled" if _backend.__name__.endswith("._core") else "python"

envelope_min_descent = _backend.envelope_min_descent
profile_best_t_batch = _backend.profile_best_t_batch
piece_value_grad = _backend.piece_value_grad
gda_saddle = _backend.gda_saddle

__all__ = [
    "BACKEND_NAME",
    "VARIANT_INFLATE",
    "VARIANT_KINK_G1",
    "VARIANT_KINK_G2",
    "envelope_min_descent",
    "profile_best_t_batch",
    "piece_value_grad",
    "gda_saddle",
]
