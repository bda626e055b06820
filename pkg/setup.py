"""Build script for the optional compiled kernel core.

The extension is best-effort: if Cython or a C compiler is unavailable the
package still installs and falls back to the pure-Python kernels at import
time (see robustfair._kernels).
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "robustfair._kernels._core",
                ["src/robustfair/_kernels/_core.pyx"],
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

setup(ext_modules=ext_modules)
