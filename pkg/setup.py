"""Build script: compiles the optional accelerator extension.

The package is fully functional without the extension (a numpy fallback is
selected at import time); the build therefore degrades gracefully when
Cython or a C compiler is unavailable.
"""

from setuptools import setup

try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "fraflow._accel._core",
                ["src/fraflow/_accel/_core.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
