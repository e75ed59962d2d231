"""Build script for the optional compiled kernels.

The package works without the extension: ``kronattn._backend`` falls back to
the numpy implementation in ``_pykernels`` when ``_ckernels`` cannot be imported.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("KRONATTN_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext = Extension(
            "kronattn._ckernels",
            ["src/kronattn/_ckernels.pyx"],
            include_dirs=[np.get_include()],
            extra_compile_args=["-O3"],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
        ext_modules = cythonize(
            [ext],
            language_level=3,
            compiler_directives={"boundscheck": False, "wraparound": False, "cdivision": True},
        )

setup(ext_modules=ext_modules)
