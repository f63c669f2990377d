"""Backend selection for the hot kernels.

The compiled ``_ckernels`` extension is used when it was built; otherwise the
numpy implementations in ``_pykernels`` are used. Set
``SECAGGPLUS_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _pykernels


def _load_backend() -> ModuleType:
    if os.environ.get("SECAGGPLUS_PURE_PYTHON") == "1":
        return _pykernels
    try:
        from . import _ckernels
    except ImportError:
        return _pykernels
    return _ckernels


backend: ModuleType = _load_backend()
BACKEND: str = backend.NAME

gf256_eval_shares = backend.gf256_eval_shares
gf256_interpolate_zero = backend.gf256_interpolate_zero
add_mod_inplace = backend.add_mod_inplace
sub_mod_inplace = backend.sub_mod_inplace
reduce_stream = backend.reduce_stream
accumulate_stream = backend.accumulate_stream


def available_backends() -> dict[str, ModuleType]:
    found = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        found["cython"] = _ckernels
    return found
