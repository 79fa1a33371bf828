"""Digital transmission baseline: the thing that falls off the cliff.

The fused feature tensor is uniformly quantized to 8 bits, entropy-coded
with a canonical Huffman code, sent as uncoded BPSK over AWGN and
hard-decided.  There is deliberately no forward error correction: a single
flipped bit usually desynchronizes the Huffman stream, and that outage is
a first-class result, not an exception.

Noise convention: the analog path adds real noise of variance
10^(-snr/10) per symbol.  BPSK here follows the matched-filter baseband
convention instead - Es/N0 = 10^(snr/10) with noise variance N0/2 on the
decision statistic - so the bit error rate is the textbook
Q(sqrt(2*Es/N0)).
"""

import math
from dataclasses import dataclass

import numpy as np
import torch

from .huffman import decode_bytes, encode_bytes
from .rng import np_rng

MAGIC = 0xA55A  # stream marker; a corrupted header is an outage
_HEADER_BITS = 16 + 32 + 256 * 8


@dataclass
class DigitalResult:
    """Outcome of one digital transmission."""

    features: torch.Tensor  # restored tensor, or None on outage
    outage: bool
    n_bits: int
    bit_errors: int


def quantize_uniform(x: np.ndarray):
    """8-bit uniform quantization; returns (codes u8, lo, hi)."""
    x = np.asarray(x, dtype=np.float64)
    lo = float(x.min())
    hi = float(x.max())
    if hi == lo:
        return np.zeros(x.shape, dtype=np.uint8), lo, hi
    step = (hi - lo) / 255.0
    q = np.clip(np.rint((x - lo) / step), 0, 255).astype(np.uint8)
    return q, lo, hi


def dequantize_uniform(q: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi == lo:
        return np.full(q.shape, lo, dtype=np.float64)
    step = (hi - lo) / 255.0
    return lo + q.astype(np.float64) * step


def _int_to_bits(value: int, width: int) -> np.ndarray:
    return np.array([(value >> (width - 1 - i)) & 1 for i in range(width)],
                    dtype=np.uint8)


def _bits_to_int(bits: np.ndarray) -> int:
    out = 0
    for b in bits:
        out = (out << 1) | int(b)
    return out


def pack_bitstream(symbols: np.ndarray, lengths: np.ndarray,
                   payload: np.ndarray) -> np.ndarray:
    """[magic u16][symbol count u32][256 code lengths u8][payload bits].

    All fields MSB-first.  The quantization range is carried out of band;
    the stream is exactly the entropy-coded payload plus what a decoder
    needs to re-derive the canonical code.
    """
    header = np.concatenate([
        _int_to_bits(MAGIC, 16),
        _int_to_bits(int(symbols.size), 32),
        np.unpackbits(np.asarray(lengths, dtype=np.uint8)),
    ])
    return np.concatenate([header, payload]).astype(np.uint8)


def unpack_bitstream(bits: np.ndarray):
    """Parse + Huffman-decode a received stream; None on any inconsistency."""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size < _HEADER_BITS:
        return None
    if _bits_to_int(bits[:16]) != MAGIC:
        return None
    n_symbols = _bits_to_int(bits[16:48])
    payload = bits[_HEADER_BITS:]
    if n_symbols > payload.size:  # each symbol costs >= 1 bit
        return None
    lengths = np.packbits(bits[48:_HEADER_BITS])
    return decode_bytes(payload, lengths, n_symbols)


def bpsk_modulate(bits: np.ndarray) -> np.ndarray:
    """Bit 0 -> +1, bit 1 -> -1."""
    return 1.0 - 2.0 * np.asarray(bits, dtype=np.float64)


def bpsk_demodulate(received: np.ndarray) -> np.ndarray:
    return (np.asarray(received) < 0).astype(np.uint8)


def transmit_bits(bits: np.ndarray, snr_db: float, seed: int) -> np.ndarray:
    """BPSK over AWGN with hard decision; returns the received bits."""
    x = bpsk_modulate(bits)
    es_n0 = 10.0 ** (snr_db / 10.0)
    sigma = math.sqrt(1.0 / (2.0 * es_n0))
    rng = np_rng(seed, "bpsk")
    return bpsk_demodulate(x + sigma * rng.standard_normal(x.size))


def bpsk_ber(snr_db: float, n_bits: int, seed: int) -> float:
    """Empirical bit error rate of the BPSK link on random bits."""
    rng = np_rng(seed, "berbits")
    bits = rng.integers(0, 2, size=n_bits).astype(np.uint8)
    out = transmit_bits(bits, snr_db, seed)
    return float(np.mean(out != bits))


def digital_transmit(features, snr_db: float, seed: int) -> DigitalResult:
    """Quantize, entropy-code, transmit, and (try to) restore one tensor.

    Accepts a torch tensor or ndarray of any shape; the restored tensor
    keeps that shape.  Any structural decode failure - corrupted magic,
    invalid code table, codeword desync, wrong symbol count - is an
    outage.
    """
    is_torch = isinstance(features, torch.Tensor)
    x = features.detach().cpu().numpy() if is_torch else np.asarray(features)
    q, lo, hi = quantize_uniform(x)
    payload, lengths = encode_bytes(q.reshape(-1))
    tx = pack_bitstream(q.reshape(-1), lengths, payload)
    rx = transmit_bits(tx, snr_db, seed)
    bit_errors = int(np.sum(rx != tx))
    decoded = unpack_bitstream(rx)
    if decoded is None or decoded.size != q.size:
        return DigitalResult(features=None, outage=True,
                             n_bits=int(tx.size), bit_errors=bit_errors)
    restored = dequantize_uniform(decoded.reshape(q.shape), lo, hi)
    out = torch.from_numpy(restored.astype(np.float32)) if is_torch \
        else restored
    return DigitalResult(features=out, outage=False,
                         n_bits=int(tx.size), bit_errors=bit_errors)
