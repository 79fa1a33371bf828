"""Build script for the optional compiled kernel core.

The package works without the extension (a pure-Python/numpy reference
backend is selected at import time); building it just makes the bit-serial
Huffman codec and the occupancy rasterizer much faster.  Set
BEVLINK_SKIP_NATIVE=1 to skip compilation entirely.
"""

import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("BEVLINK_SKIP_NATIVE"):
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "bevlink.kernels._native",
                    ["src/bevlink/kernels/_native.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
