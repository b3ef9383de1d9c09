import os

from setuptools import Extension, setup

# The compiled kernel is optional: without Cython (or with CSGMM_SKIP_EXT=1)
# the package installs pure-Python and csgmm.backend falls back to numpy.
ext_modules = []
if not os.environ.get("CSGMM_SKIP_EXT"):
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "csgmm._kernels",
                    ["src/csgmm/_kernels.pyx"],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        pass

setup(ext_modules=ext_modules)
