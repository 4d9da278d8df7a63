"""Backend selection for the sampling kernels.

The compiled extension is used when it was built; otherwise the pure-Python
kernels are used.  ``GUIDEDNEST_BACKEND=python`` forces the fallback.  Both
expose ``sweep`` and ``foldin_sweep`` and give bit-identical results.
"""
import os

from . import _pykernels
from .errors import ParameterError

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels

BACKEND = "cython" if _ckernels is not None else "python"
if os.environ.get("GUIDEDNEST_BACKEND") in BACKENDS:
    BACKEND = os.environ["GUIDEDNEST_BACKEND"]
_impl = BACKENDS[BACKEND]


def set_backend(name: str) -> None:
    global BACKEND, _impl
    if name not in BACKENDS:
        raise ParameterError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}")
    BACKEND = name
    _impl = BACKENDS[name]


def get_backend() -> str:
    return BACKEND


def sweep(*args):
    return _impl.sweep(*args)


def foldin_sweep(*args):
    return _impl.foldin_sweep(*args)
