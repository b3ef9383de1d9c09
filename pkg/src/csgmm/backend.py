"""Selects the estimation kernel at import: the compiled Cython extension when
available, otherwise the pure-numpy fallback. ``CSGMM_BACKEND=python`` or
``=compiled`` forces the choice."""

import os

from . import _kernels_py

try:
    from . import _kernels  # compiled extension, optional
except ImportError:
    _kernels = None

_BACKENDS = {"python": _kernels_py}
if _kernels is not None:
    _BACKENDS["compiled"] = _kernels


def available_backends():
    return tuple(sorted(_BACKENDS))


def get_backend(name):
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(
            f"backend {name!r} not available (have: {', '.join(sorted(_BACKENDS))})"
        ) from None


_forced = os.environ.get("CSGMM_BACKEND")
if _forced:
    active = get_backend(_forced)
else:
    active = _kernels if _kernels is not None else _kernels_py

BACKEND_NAME = active.BACKEND
estimate_batch = active.estimate_batch
