"""Build script for the optional compiled n-gram kernel.

The package is fully functional without the extension (a pure-Python
backend is selected at import time); the extension only accelerates the
hot per-token scoring and sampling loops. Build failures therefore
degrade to a warning instead of aborting the install.
"""

import warnings

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Build the kernel if possible, fall back to pure Python otherwise."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            warnings.warn(f"compiled kernel skipped ({exc}); using pure-Python backend")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            warnings.warn(f"compiled kernel skipped ({exc}); using pure-Python backend")


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        warnings.warn("Cython not available; using pure-Python backend")
        return []
    return cythonize(
        [
            Extension(
                "domaincert.kernels._ckernels",
                ["src/domaincert/kernels/_ckernels.pyx"],
                language="c++",
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )


setup(ext_modules=extensions(), cmdclass={"build_ext": optional_build_ext})
