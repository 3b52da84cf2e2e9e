"""Build the optional compiled kernel core.

The package works without the extension (a NumPy fallback is selected at
import time); building it just makes warping, cost-volume evaluation and
the refinement loop considerably faster.

    python setup.py build_ext --inplace
"""
import os

import numpy as np
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Never fail the install because the compiled core did not build."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"warning: compiled kernels not built ({exc}); "
                  "falling back to the NumPy backend")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: {ext.name} failed to compile ({exc}); "
                  "falling back to the NumPy backend")


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    compile_args = ["-O3"]
    link_args = []
    if os.environ.get("FEATREG_NO_OPENMP") != "1":
        compile_args.append("-fopenmp")
        link_args.append("-fopenmp")
    ext = Extension(
        "featreg._native",
        ["src/featreg/_native.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=compile_args,
        extra_link_args=link_args,
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
