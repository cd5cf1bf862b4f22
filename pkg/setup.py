"""Build script: compiles the optional Cython patch-extraction core.

The package is fully functional without the extension (a numpy fallback is
selected at import time), so any build failure here downgrades to a pure
install instead of aborting.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext = Extension(
        "denoisekd.kernels._patchcore",
        sources=["src/denoisekd/kernels/_patchcore.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    ext_modules = cythonize(
        [ext],
        language_level="3",
        compiler_directives={"boundscheck": False, "wraparound": False},
    )
except Exception as exc:  # pragma: no cover - build-environment dependent
    print(f"denoisekd: skipping compiled kernels ({exc}); using numpy fallback")

setup(ext_modules=ext_modules)
