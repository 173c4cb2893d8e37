"""Backend selection for the hot path recursions.

The compiled extension ``estfun._ckernels`` is used when it was built;
otherwise the pure-Python module is used. Setting ``ESTFUN_PURE_PYTHON=1``
forces the fallback.
"""
import os

from estfun import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("ESTFUN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from estfun import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        pass

ar_filter = _impl.ar_filter
euler_affine = _impl.euler_affine

__all__ = ["BACKEND", "ar_filter", "euler_affine"]
