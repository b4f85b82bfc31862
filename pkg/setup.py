"""Build script: compiles the optional fast-kernel extension when Cython and a
C compiler are available, and degrades to a pure-Python install otherwise."""

import sys

from setuptools import setup
from setuptools.command.build_ext import build_ext


def _extensions():
    try:
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        print("fedcostwavg: Cython not available, building without the compiled "
              "kernel (numpy fallback will be used)", file=sys.stderr)
        return []
    ext = Extension(
        "fedcostwavg._kernels._fastcore",
        sources=["src/fedcostwavg/_kernels/_fastcore.pyx"],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


class optional_build_ext(build_ext):
    """Never fail the install over the extension; the package runs without it."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            print(f"fedcostwavg: skipping compiled kernel ({exc}); "
                  "numpy fallback will be used", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"fedcostwavg: failed to compile {ext.name} ({exc}); "
                  "numpy fallback will be used", file=sys.stderr)


setup(ext_modules=_extensions(), cmdclass={"build_ext": optional_build_ext})
