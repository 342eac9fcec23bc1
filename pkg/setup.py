"""Build script for the compiled rasterization core.

The extension is optional: if no C compiler (or OpenMP) is available the
install still succeeds and the package falls back to the pure-NumPy kernels
at import time.  Build in place for development with

    python3 setup.py build_ext --inplace
"""

import sys

from Cython.Build import cythonize
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

# -ffp-contract=off keeps the C arithmetic bit-identical to the NumPy
# fallback (no fused multiply-add), which the oracle-equivalence tests rely on.
if sys.platform == "win32":
    compile_args = ["/O2", "/openmp", "/fp:strict"]
    link_args = []
else:
    compile_args = ["-O3", "-march=native", "-fopenmp", "-ffp-contract=off"]
    link_args = ["-fopenmp"]

extensions = [
    Extension(
        "pointsplat._kernels",
        sources=["src/pointsplat/_kernels.pyx"],
        extra_compile_args=compile_args,
        extra_link_args=link_args,
    )
]


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing entirely
            self._skip(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            self._skip(exc)

    @staticmethod
    def _skip(exc):
        print(
            "WARNING: building pointsplat._kernels failed (%s); "
            "the pure-Python kernels will be used instead." % exc,
            file=sys.stderr,
        )


setup(
    ext_modules=cythonize(
        extensions, compiler_directives={"language_level": "3"}
    ),
    cmdclass={"build_ext": OptionalBuildExt},
)
