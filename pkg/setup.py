import os

from setuptools import Extension, setup

# The compiled kernel is optional: set OPENCHAIN_PURE_PYTHON=1 to skip it and
# rely on the pure-Python fallback selected at import time.
#
# No -ffast-math / -march=native: the compiled kernel and the Python fallback
# must produce bit-identical streams, which requires strict IEEE semantics.
ext_modules = []
if not os.environ.get("OPENCHAIN_PURE_PYTHON"):
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "openchain._ckernels",
                    ["src/openchain/_ckernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
