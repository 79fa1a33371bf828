"""Timing comparison of the compiled kernels against the reference backend.

Run as a script:

    python3 benchmarks/bench_kernels.py

Workloads mirror real use: Huffman coding of a quantized symbol stream the
size of one transmitted frame, and mask rasterization for a batch of frames.
"""

import argparse
import time

import numpy as np

from bevlink import kernels
from bevlink.huffman import canonical_codes, code_lengths_from_counts


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def huffman_workload(n_symbols, seed):
    rng = np.random.default_rng(seed)
    # roughly gaussian-quantized stream, like the digital path emits
    symbols = np.clip(rng.normal(128, 20, n_symbols), 0, 255).astype(np.uint8)
    counts = np.bincount(symbols, minlength=256)
    lengths = code_lengths_from_counts(counts)
    codes = canonical_codes(lengths)
    return symbols, lengths, codes


def rasterize_workload(n_rects, seed):
    rng = np.random.default_rng(seed)
    return {
        "cx": rng.uniform(-30, 30, n_rects),
        "cy": rng.uniform(-30, 30, n_rects),
        "heading": rng.uniform(-np.pi, np.pi, n_rects),
        "length": rng.uniform(3.5, 5.5, n_rects),
        "width": rng.uniform(1.6, 2.2, n_rects),
    }


def run(repeats):
    rows = []

    symbols, lengths, codes = huffman_workload(49152, seed=0)
    kernels.set_backend("reference")
    bits = kernels.huffman_encode(symbols, lengths, codes)

    def bench(label, fn):
        timings = {}
        for backend in ("reference", "native"):
            if backend == "native" and not kernels.HAVE_NATIVE:
                timings[backend] = None
                continue
            kernels.set_backend(backend)
            timings[backend] = timeit(fn, repeats)
        rows.append((label, timings))

    bench("huffman_encode 48k syms",
          lambda: kernels.huffman_encode(symbols, lengths, codes))
    bench("huffman_decode 48k syms",
          lambda: kernels.huffman_decode(bits, lengths, len(symbols)))

    rects = rasterize_workload(12, seed=1)
    bench("rasterize 12 rects 64x64",
          lambda: kernels.rasterize_rects(
              **rects, x_min=-32.0, y_min=-32.0, cell=1.0, resolution=64))
    rects_big = rasterize_workload(40, seed=2)
    bench("rasterize 40 rects 256x256",
          lambda: kernels.rasterize_rects(
              **rects_big, x_min=-32.0, y_min=-32.0, cell=0.25,
              resolution=256))

    print(f"{'workload':<28} {'reference':>12} {'native':>12} {'speedup':>9}")
    for label, t in rows:
        ref, nat = t["reference"], t["native"]
        if nat is None:
            print(f"{label:<28} {ref * 1e3:>10.2f}ms {'n/a':>12} {'':>9}")
        else:
            print(f"{label:<28} {ref * 1e3:>10.2f}ms {nat * 1e3:>10.2f}ms "
                  f"{ref / nat:>8.1f}x")
    kernels.set_backend("native" if kernels.HAVE_NATIVE else "reference")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5,
                    help="take the best of this many runs")
    run(ap.parse_args().repeats)
