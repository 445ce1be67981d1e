"""Training-loop kernels: compiled core with a pure-numpy fallback.

The hot path (one full epoch of minibatch forward/backward/update) exists
twice: ``_fast`` is a Cython extension, ``pyref`` is plain numpy.  Both
implement the same contract and consume identical random streams.  Selection
happens at import; set ABSTAINNET_BACKEND=python or =compiled to force one
(the latter raises if the extension is not built).
"""

import os

from . import pyref

_forced = os.environ.get("ABSTAINNET_BACKEND", "auto").lower()

if _forced == "python":
    _impl = pyref
elif _forced == "compiled":
    from . import _fast as _impl  # noqa: F401  (ImportError here is intentional)
else:
    try:
        from . import _fast as _impl
    except ImportError:
        _impl = pyref

run_epoch = _impl.run_epoch
BACKEND = "compiled" if _impl is not pyref else "python"


def backend_name() -> str:
    return BACKEND


def get_backend(name: str):
    """Return a specific backend module ("python" or "compiled")."""
    if name == "python":
        return pyref
    if name == "compiled":
        from . import _fast
        return _fast
    raise ValueError(f"unknown backend {name!r}")
