"""Backend selection: compiled extension when available, pure Python otherwise.

Both backends implement the same array-level API (predicate signs, curve
keys, radix sort, ``insert_batch``). The compiled one is built from
``_ckern.pyx`` at install time; if the import fails the package still works
on the pure-Python twin, only slower. ``TETFORGE_BACKEND=python`` forces the
fallback.
"""

import os

from . import _pykern

try:
    from . import _ckern
except ImportError:  # pragma: no cover - depends on build environment
    _ckern = None

HAVE_COMPILED = _ckern is not None

_DEFAULT = "python" if os.environ.get("TETFORGE_BACKEND") == "python" else "auto"


def get_backend(name: str = "auto"):
    """Return the kernel module for ``name`` in {auto, compiled, python}."""
    if name in (None, "auto"):
        name = _DEFAULT
    if name == "auto":
        return _ckern if HAVE_COMPILED else _pykern
    if name == "compiled":
        if _ckern is None:
            raise RuntimeError("compiled backend requested but tetforge._ckern is not built")
        return _ckern
    if name == "python":
        return _pykern
    raise ValueError(f"unknown backend {name!r}")


def backend_name(mod) -> str:
    return "compiled" if mod is _ckern and _ckern is not None else "python"
