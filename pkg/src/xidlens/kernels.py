"""Backend selection for the hot loops.

The compiled extension is used when it was built; otherwise the pure-Python
module is. Set ``XIDLENS_PURE_PYTHON=1`` to force the fallback.
"""

import importlib
import os

MODULES = {"python": "xidlens._pykernels", "cython": "xidlens._kernels"}


def _force_pure() -> bool:
    return os.environ.get("XIDLENS_PURE_PYTHON", "").lower() in ("1", "true", "yes")


def load(name: str | None = None):
    """Return the kernel module for ``"cython"``, ``"python"`` or the default."""
    if name is not None:
        if name not in MODULES:
            raise ValueError(f"unknown kernel backend {name!r}; expected one of {sorted(MODULES)}")
        return importlib.import_module(MODULES[name])
    if _force_pure():
        return load("python")
    try:
        return load("cython")
    except ImportError:
        return load("python")


def available() -> list[str]:
    names = ["python"]
    try:
        load("cython")
        names.insert(0, "cython")
    except ImportError:
        pass
    return names


_impl = load()
BACKEND = "cython" if _impl.__name__.endswith("._kernels") else "python"

coalesce_chains = _impl.coalesce_chains
first_successor = _impl.first_successor
sim_tick = _impl.sim_tick
sim_event = _impl.sim_event
