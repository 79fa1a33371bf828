"""Reference backend for the kernel core.

Pure numpy / Python implementations of the hot kernels.  The compiled
backend in ``_native.pyx`` mirrors these signatures exactly; this module is
the behavioural oracle the extension is tested against, and the fallback
used when the extension was not built.
"""

import numpy as np

MAX_CODE_LEN = 32


def huffman_encode(symbols: np.ndarray, lengths: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Concatenate the canonical codewords of ``symbols`` MSB-first.

    symbols: uint8 array of symbol values.
    lengths/codes: per-symbol code lengths (uint8) and codeword values (uint32).
    Returns a uint8 array of 0/1 bits.
    """
    if symbols.size == 0:
        return np.zeros(0, dtype=np.uint8)
    lens = lengths[symbols].astype(np.int64)
    if lens.min() < 1:
        raise ValueError("symbol without a codeword")
    max_len = int(lens.max())
    vals = codes[symbols].astype(np.uint32)
    # Row i holds the bits of codeword i left-aligned; the valid mask then
    # selects them row-major, which is exactly MSB-first concatenation.
    shifts = lens[:, None] - 1 - np.arange(max_len)[None, :]
    valid = shifts >= 0
    bits = (vals[:, None] >> np.clip(shifts, 0, 31)) & 1
    return bits[valid].astype(np.uint8)


def huffman_decode(bits: np.ndarray, lengths: np.ndarray, n_symbols: int):
    """Decode ``n_symbols`` canonical-Huffman symbols from a 0/1 bit array.

    Returns the uint8 symbol array, or None when the stream desynchronizes:
    invalid length table, a bit pattern with no codeword, bits exhausted
    early, or leftover bits after the last symbol.
    """
    tables = build_decode_tables(lengths)
    if tables is None:
        return None
    first_code, count, index_offset, sym_sorted = tables
    out = np.zeros(n_symbols, dtype=np.uint8)
    code = 0
    code_len = 0
    produced = 0
    for bit in bits:
        if produced >= n_symbols:
            return None  # leftover bits
        code = (code << 1) | int(bit)
        code_len += 1
        if code_len > MAX_CODE_LEN:
            return None
        rel = code - first_code[code_len]
        if 0 <= rel < count[code_len]:
            out[produced] = sym_sorted[index_offset[code_len] + rel]
            produced += 1
            code = 0
            code_len = 0
    if produced != n_symbols or code_len != 0:
        return None
    return out


def build_decode_tables(lengths: np.ndarray):
    """Canonical decode tables from a length table; None if the table is invalid.

    A table is invalid when any length exceeds MAX_CODE_LEN, no symbol has a
    code, or the Kraft sum exceeds 1 (the corrupted-header case).
    """
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.max(initial=0) > MAX_CODE_LEN or (lengths > 0).sum() == 0:
        return None
    count = np.zeros(MAX_CODE_LEN + 1, dtype=np.int64)
    for ln in lengths:
        if ln > 0:
            count[ln] += 1
    kraft = int((count * (1 << (MAX_CODE_LEN - np.arange(MAX_CODE_LEN + 1)))).sum())
    if kraft > (1 << MAX_CODE_LEN):
        return None
    first_code = np.zeros(MAX_CODE_LEN + 1, dtype=np.int64)
    index_offset = np.zeros(MAX_CODE_LEN + 1, dtype=np.int64)
    code = 0
    idx = 0
    for ln in range(1, MAX_CODE_LEN + 1):
        first_code[ln] = code
        index_offset[ln] = idx
        code = (code + count[ln]) << 1
        idx += count[ln]
    # symbols sorted by (length, value), zero-length symbols dropped
    order = np.lexsort((np.arange(lengths.size), lengths))
    sym_sorted = order[lengths[order] > 0].astype(np.uint8)
    return first_code, count, index_offset, sym_sorted


def rasterize_rects(cx, cy, heading, length, width, x_min, y_min, cell, resolution):
    """Occupancy of axis-arbitrary rectangles sampled at cell centers.

    Cell (i, j) is set when its center lies inside any rectangle (borders
    inclusive).  Vectorized over cells and rectangles.
    """
    g = int(resolution)
    mask = np.zeros((g, g), dtype=np.uint8)
    n = len(cx)
    if n == 0:
        return mask
    xs = x_min + (np.arange(g) + 0.5) * cell
    ys = y_min + (np.arange(g) + 0.5) * cell
    px, py = np.meshgrid(xs, ys, indexing="xy")
    for k in range(n):
        dx = px - cx[k]
        dy = py - cy[k]
        c, s = np.cos(heading[k]), np.sin(heading[k])
        u = c * dx + s * dy
        v = -s * dx + c * dy
        inside = (np.abs(u) <= length[k] / 2.0) & (np.abs(v) <= width[k] / 2.0)
        mask[inside] = 1
    return mask
