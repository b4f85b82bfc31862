"""Kernel backend selection.

The compiled extension is preferred when importable; the numpy fallback is
used otherwise.  ``FEDCOST_BACKEND`` forces the choice:

    FEDCOST_BACKEND=cython   require the compiled kernels (ImportError if absent)
    FEDCOST_BACKEND=numpy    force the fallback
    FEDCOST_BACKEND=auto     default behaviour

Both backends expose the same functions; see ``pyfallback`` for the calling
convention.  ``backend_name()`` reports which one is active.
"""

import os

_choice = os.environ.get("FEDCOST_BACKEND", "auto").lower()

if _choice not in ("auto", "cython", "numpy"):
    raise ImportError(f"FEDCOST_BACKEND must be auto, cython or numpy, got {_choice!r}")

if _choice == "numpy":
    from fedcostwavg._kernels import pyfallback as impl
elif _choice == "cython":
    from fedcostwavg._kernels import _fastcore as impl  # type: ignore[no-redef]
else:
    try:
        from fedcostwavg._kernels import _fastcore as impl  # type: ignore[no-redef]
    except ImportError:
        from fedcostwavg._kernels import pyfallback as impl


def backend_name() -> str:
    """Name of the active kernel backend ('cython' or 'numpy')."""
    return impl.name
