"""Hot loops with a compiled backend and a NumPy fallback.

The compiled extension is used when it imports; setting
``SMALLIMPACT_PURE_PYTHON=1`` forces the fallback.
"""

import os

from ._pykernels import NewtonFailure

if os.environ.get("SMALLIMPACT_PURE_PYTHON", "") not in ("", "0"):
    from . import _pykernels as _impl
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        from . import _pykernels as _impl

BACKEND = _impl.BACKEND
reaction_step = _impl.reaction_step
tridiag_solve = _impl.tridiag_solve
state_recurrence = _impl.state_recurrence
tracker_recurrence = _impl.tracker_recurrence
directed_linf = _impl.directed_linf
directed_polyline = _impl.directed_polyline

__all__ = ["BACKEND", "NewtonFailure", "reaction_step", "tridiag_solve", "state_recurrence",
           "tracker_recurrence", "directed_linf", "directed_polyline"]
