"""Builds the optional compiled convolution core.

The package is fully functional without it: convd.kernels falls back to a
vectorized NumPy implementation when the extension is absent or fails to
build (no compiler, no Cython). Set CONVD_PURE_PYTHON=1 to skip the
extension on purpose.
"""

import os

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:
            print(f"convd: compiled kernels skipped ({exc}); using pure-Python fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"convd: {ext.name} skipped ({exc}); using pure-Python fallback")


def extensions():
    if os.environ.get("CONVD_PURE_PYTHON"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "convd.kernels._core",
        ["src/convd/kernels/_core.pyx"],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
