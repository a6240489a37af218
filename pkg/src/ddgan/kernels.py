"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``DDGAN_PURE_PYTHON`` is set to a non-empty value other
than ``0``, the pure-Python implementations are used.
"""

import logging
import os

from . import _pykernels

log = logging.getLogger(__name__)


def _load():
    if os.environ.get("DDGAN_PURE_PYTHON", "0") not in ("", "0"):
        return _pykernels, "python"
    try:
        from . import _kernels
    except ImportError as exc:  # pragma: no cover - depends on the build
        log.debug("compiled kernels unavailable (%s); using pure Python", exc)
        return _pykernels, "python"
    return _kernels, "compiled"


_impl, BACKEND = _load()

adam_update = _impl.adam_update
query_scores = _impl.query_scores

BACKENDS = {"python": _pykernels}
try:
    from . import _kernels as _compiled

    BACKENDS["compiled"] = _compiled
except ImportError:  # pragma: no cover
    pass
