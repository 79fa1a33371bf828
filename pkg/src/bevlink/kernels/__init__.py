"""Kernel core: compiled extension with a pure-Python twin.

The backend is chosen once at import: the Cython extension when it was
built, otherwise the numpy/Python reference.  ``BEVLINK_NO_NATIVE=1`` forces
the reference backend; ``set_backend`` switches explicitly (used by the
parity tests and the benchmark).  Both backends implement identical
contracts, documented in ``_reference``.
"""

import os

from . import _reference

try:
    from . import _native

    HAVE_NATIVE = True
except ImportError:
    _native = None
    HAVE_NATIVE = False

_backend = _reference
if HAVE_NATIVE and not os.environ.get("BEVLINK_NO_NATIVE"):
    _backend = _native

MAX_CODE_LEN = _reference.MAX_CODE_LEN


def backend_name() -> str:
    return "native" if _backend is _native else "reference"


def set_backend(name: str) -> None:
    global _backend
    if name == "native":
        if not HAVE_NATIVE:
            raise RuntimeError("native kernel backend was not built")
        _backend = _native
    elif name == "reference":
        _backend = _reference
    else:
        raise ValueError(f"unknown kernel backend: {name!r}")


def huffman_encode(symbols, lengths, codes):
    return _backend.huffman_encode(symbols, lengths, codes)


def huffman_decode(bits, lengths, n_symbols):
    return _backend.huffman_decode(bits, lengths, n_symbols)


def rasterize_rects(cx, cy, heading, length, width, x_min, y_min, cell, resolution):
    return _backend.rasterize_rects(
        cx, cy, heading, length, width, x_min, y_min, cell, resolution
    )
