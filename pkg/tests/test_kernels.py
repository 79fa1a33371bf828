"""Kernel core: parity between backends, codec properties, rasterizer oracle."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bevlink import huffman, kernels
from bevlink.huffman import canonical_codes, code_lengths_from_counts

BACKENDS = ["reference"] + (["native"] if kernels.HAVE_NATIVE else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend("native" if kernels.HAVE_NATIVE else "reference")


def test_native_backend_was_built():
    # The extension is part of the deliverable; fail loudly if it is missing.
    assert kernels.HAVE_NATIVE


def test_code_lengths_basic_properties():
    counts = np.zeros(256, dtype=np.int64)
    counts[65] = 10
    counts[66] = 5
    counts[67] = 1
    lengths = code_lengths_from_counts(counts)
    assert lengths[65] == 1  # most frequent symbol gets the shortest code
    assert (lengths[np.setdiff1d(np.arange(256), [65, 66, 67])] == 0).all()
    # Kraft equality for a complete code
    assert sum(2.0 ** -int(ln)
               for ln in lengths[lengths > 0]) == pytest.approx(1.0)


def test_code_lengths_single_symbol():
    counts = np.zeros(256, dtype=np.int64)
    counts[42] = 7
    lengths = code_lengths_from_counts(counts)
    assert lengths[42] == 1
    assert lengths.sum() == 1


def test_code_lengths_empty():
    assert code_lengths_from_counts(np.zeros(256, dtype=np.int64)).sum() == 0


def test_code_lengths_rejects_bad_input():
    with pytest.raises(ValueError):
        code_lengths_from_counts(np.zeros(10, dtype=np.int64))
    bad = np.zeros(256, dtype=np.int64)
    bad[0] = -1
    with pytest.raises(ValueError):
        code_lengths_from_counts(bad)


def test_code_depth_limit_enforced():
    # Fibonacci weights force one extra level per symbol; 48 of them
    # exceed the 32-bit cap.
    counts = np.zeros(256, dtype=np.int64)
    a, b = 1, 1
    for s in range(48):
        counts[s] = a
        a, b = b, a + b
    with pytest.raises(ValueError, match="exceeds"):
        code_lengths_from_counts(counts)


def test_canonical_codes_are_prefix_free_and_ordered():
    rng = np.random.default_rng(3)
    counts = rng.integers(0, 1000, 256)
    lengths = code_lengths_from_counts(counts)
    codes = canonical_codes(lengths)
    present = np.nonzero(lengths)[0]
    bitstrings = {
        s: format(int(codes[s]), f"0{int(lengths[s])}b") for s in present
    }
    items = sorted(bitstrings.values())
    for a, b in zip(items, items[1:]):
        assert not b.startswith(a), f"{a} is a prefix of {b}"
    # canonical order: sorted by (length, symbol) the integer codes increase
    ranked = sorted(present, key=lambda s: (lengths[s], s))
    for s, t in zip(ranked, ranked[1:]):
        assert int(codes[t]) > int(codes[s]) or lengths[t] > lengths[s]


def test_canonical_codes_wide_alphabet_no_wraparound():
    # All 256 symbols present: codewords must exceed 8 bits of value space.
    counts = np.ones(256, dtype=np.int64)
    lengths = code_lengths_from_counts(counts)
    codes = canonical_codes(lengths)
    assert (lengths == 8).all()
    assert sorted(int(c) for c in codes) == list(range(256))


def test_roundtrip_both_backends(backend):
    rng = np.random.default_rng(11)
    data = rng.integers(0, 256, 5000).astype(np.uint8)
    bits, lengths = huffman.encode_bytes(data)
    out = huffman.decode_bytes(bits, lengths, len(data))
    assert out is not None
    assert np.array_equal(out, data)


def test_roundtrip_skewed_distribution(backend):
    rng = np.random.default_rng(12)
    data = rng.choice(
        np.arange(4, dtype=np.uint8), size=4000, p=[0.90, 0.06, 0.03, 0.01]
    )
    bits, lengths = huffman.encode_bytes(data)
    assert len(bits) < 8 * len(data)  # actually compresses
    assert np.array_equal(huffman.decode_bytes(bits, lengths, len(data)), data)


def test_encode_empty(backend):
    bits, lengths = huffman.encode_bytes(np.zeros(0, dtype=np.uint8))
    assert bits.size == 0


def test_decode_desync_returns_none(backend):
    data = np.arange(256, dtype=np.uint8).repeat(4)
    bits, lengths = huffman.encode_bytes(data)
    assert huffman.decode_bytes(bits[:-3], lengths, len(data)) is None
    extra = np.concatenate([bits, np.ones(5, dtype=np.uint8)])
    assert huffman.decode_bytes(extra, lengths, len(data)) is None


def test_decode_invalid_length_table(backend):
    lengths = np.zeros(256, dtype=np.uint8)
    assert huffman.decode_bytes(np.ones(8, dtype=np.uint8), lengths, 1) is None
    lengths[0] = 33  # beyond the cap
    assert huffman.decode_bytes(np.ones(8, dtype=np.uint8), lengths, 1) is None
    # Kraft violation: three 1-bit codes cannot coexist
    lengths = np.zeros(256, dtype=np.uint8)
    lengths[:3] = 1
    assert huffman.decode_bytes(np.ones(3, dtype=np.uint8), lengths, 3) is None


@settings(max_examples=40, deadline=None)
@given(st.binary(min_size=0, max_size=2000))
def test_roundtrip_property(payload):
    data = np.frombuffer(payload, dtype=np.uint8)
    bits, lengths = huffman.encode_bytes(data)
    if data.size:
        assert np.array_equal(huffman.decode_bytes(bits, lengths, data.size), data)
    else:
        assert bits.size == 0


def test_backend_parity_on_random_streams():
    if not kernels.HAVE_NATIVE:
        pytest.skip("native backend not built")
    rng = np.random.default_rng(21)
    for _ in range(5):
        data = rng.integers(0, 256, rng.integers(1, 3000)).astype(np.uint8)
        kernels.set_backend("reference")
        bits_ref, lengths = huffman.encode_bytes(data)
        kernels.set_backend("native")
        bits_nat, _ = huffman.encode_bytes(data)
        assert np.array_equal(bits_ref, bits_nat)
        assert np.array_equal(
            kernels.huffman_decode(bits_nat, lengths, data.size), data
        )
    kernels.set_backend("native")


def _point_in_rect(px, py, cx, cy, heading, length, width):
    ux, uy = math.cos(heading), math.sin(heading)
    du = (px - cx) * ux + (py - cy) * uy
    dv = -(px - cx) * uy + (py - cy) * ux
    return abs(du) <= length / 2 and abs(dv) <= width / 2


def test_rasterize_matches_pointwise_oracle(backend):
    rng = np.random.default_rng(5)
    g, cell, x_min, y_min = 24, 1.0, -12.0, -12.0
    for _ in range(4):
        n = rng.integers(1, 5)
        cx = rng.uniform(-10, 10, n)
        cy = rng.uniform(-10, 10, n)
        heading = rng.uniform(-np.pi, np.pi, n)
        length = rng.uniform(2, 6, n)
        width = rng.uniform(1, 3, n)
        mask = kernels.rasterize_rects(cx, cy, heading, length, width,
                                       x_min, y_min, cell, g)
        for i in range(g):
            for j in range(g):
                px = x_min + (j + 0.5) * cell
                py = y_min + (i + 0.5) * cell
                expect = any(
                    _point_in_rect(px, py, cx[k], cy[k], heading[k],
                                   length[k], width[k])
                    for k in range(n)
                )
                assert bool(mask[i, j]) == expect, (i, j)


def test_rasterize_backend_parity():
    if not kernels.HAVE_NATIVE:
        pytest.skip("native backend not built")
    rng = np.random.default_rng(9)
    for _ in range(10):
        n = rng.integers(0, 8)
        args = (rng.uniform(-30, 30, n), rng.uniform(-30, 30, n),
                rng.uniform(-4, 4, n), rng.uniform(2, 6, n),
                rng.uniform(1, 3, n), -32.0, -32.0, 1.0, 64)
        kernels.set_backend("reference")
        ref = kernels.rasterize_rects(*args)
        kernels.set_backend("native")
        nat = kernels.rasterize_rects(*args)
        assert np.array_equal(ref, nat)
    kernels.set_backend("native")


def test_rasterize_empty(backend):
    mask = kernels.rasterize_rects(
        np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0),
        -32.0, -32.0, 1.0, 64)
    assert mask.shape == (64, 64)
    assert mask.sum() == 0
