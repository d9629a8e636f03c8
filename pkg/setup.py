"""Build script for the optional compiled coordinate-descent kernel.

The package works without the extension (a NumPy fallback is selected at
import time), so the build is marked optional and failures are non-fatal.
"""

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover - cython is a build requirement
    cythonize = None

extensions = [
    Extension(
        "hetsvm._cd_kernel",
        sources=["src/hetsvm/_cd_kernel.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        optional=True,
    )
]

if cythonize is not None:
    ext_modules = cythonize(extensions, language_level=3)
else:  # pragma: no cover
    ext_modules = []

setup(ext_modules=ext_modules)
