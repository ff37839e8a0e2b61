"""Build hook for the optional compiled core.

The package works without the extension: if Cython or a C compiler is
missing the build falls back to the pure numpy kernels at import time.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("SBFR_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "sbfr._core",
                    sources=["src/sbfr/_core.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3", "-fopenmp"],
                    extra_link_args=["-fopenmp"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
