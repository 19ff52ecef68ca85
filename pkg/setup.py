"""Build the optional compiled scoring kernels.

The package is fully functional without them (a NumPy fallback is selected
at import time). Set RAGFUSE_NO_EXT=1 to skip the extension build.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("RAGFUSE_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "ragfuse._accel",
                    ["src/ragfuse/_accel.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )
    except Exception as exc:  # pragma: no cover - toolchain-dependent
        print(f"ragfuse: compiled kernels disabled ({exc}); using NumPy fallback")
        ext_modules = []

setup(ext_modules=ext_modules)
