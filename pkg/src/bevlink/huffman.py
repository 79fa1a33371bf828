"""Canonical Huffman coding over byte alphabets.

Code construction lives here in Python (it runs once per tensor, on 256
counts); the bit-serial encode/decode hot loops live in the kernels
package.  Codes are canonical so only the 256 code lengths travel in the
bitstream header.
"""

import heapq

import numpy as np

from . import kernels
from .kernels import MAX_CODE_LEN


def code_lengths_from_counts(counts) -> np.ndarray:
    """Huffman code length per symbol; zero for symbols that never occur.

    Deterministic: ties in the priority queue break on insertion order.
    A single-symbol alphabet gets a 1-bit code.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.shape != (256,):
        raise ValueError(f"counts must have shape (256,), got {counts.shape}")
    if np.any(counts < 0):
        raise ValueError("counts must be non-negative")
    present = np.nonzero(counts)[0]
    lengths = np.zeros(256, dtype=np.uint8)
    if present.size == 0:
        return lengths
    if present.size == 1:
        lengths[present[0]] = 1
        return lengths
    # (weight, tiebreak, symbols-in-subtree)
    heap = [(int(counts[s]), int(s), [int(s)]) for s in present]
    heapq.heapify(heap)
    tie = 256
    depth = np.zeros(256, dtype=np.int64)
    while len(heap) > 1:
        wa, _, syms_a = heapq.heappop(heap)
        wb, _, syms_b = heapq.heappop(heap)
        merged = syms_a + syms_b
        depth[merged] += 1
        heapq.heappush(heap, (wa + wb, tie, merged))
        tie += 1
    if depth.max() > MAX_CODE_LEN:
        raise ValueError(
            f"Huffman depth {depth.max()} exceeds the {MAX_CODE_LEN}-bit limit")
    lengths[present] = depth[present]
    return lengths


def canonical_codes(lengths) -> np.ndarray:
    """Codeword per symbol for the canonical code defined by `lengths`.

    Symbols are ranked by (length, symbol value); codes of each length are
    consecutive, starting from the doubled successor of the previous
    length's last code.  Matches the decode tables in the kernels.
    """
    lengths = np.asarray(lengths, dtype=np.uint8)
    codes = np.zeros(256, dtype=np.uint32)
    order = [s for s in range(256) if lengths[s] > 0]
    order.sort(key=lambda s: (lengths[s], s))
    code = 0
    prev_len = 0
    for s in order:
        ln = int(lengths[s])  # keep plain ints: numpy scalars wrap at 8 bits
        code <<= ln - prev_len
        codes[s] = code
        code += 1
        prev_len = ln
    return codes


def encode_bytes(data):
    """Huffman-code a byte array; returns (bits, lengths).

    Accepts bytes or a uint8 array.  bits is a 0/1 uint8 vector; lengths is
    the 256-entry code-length table a decoder needs.
    """
    if isinstance(data, (bytes, bytearray, memoryview)):
        data = np.frombuffer(data, dtype=np.uint8)
    data = np.ascontiguousarray(data, dtype=np.uint8)
    counts = np.bincount(data, minlength=256)
    lengths = code_lengths_from_counts(counts)
    codes = canonical_codes(lengths)
    bits = kernels.huffman_encode(data, lengths, codes)
    return bits, lengths


def decode_bytes(bits: np.ndarray, lengths: np.ndarray, n_symbols: int):
    """Inverse of encode_bytes; None signals desynchronization."""
    return kernels.huffman_decode(
        np.ascontiguousarray(bits, dtype=np.uint8),
        np.ascontiguousarray(lengths, dtype=np.uint8),
        int(n_symbols),
    )
