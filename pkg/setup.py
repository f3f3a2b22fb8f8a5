import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("XVA_BSDE_NO_EXT", "") in ("", "0"):
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [Extension("xvabsde._ckernels", ["src/xvabsde/_ckernels.pyx"], extra_compile_args=["-O3"])],
            language_level=3,
        )
    except ImportError:  # no Cython: the numpy fallback is used at import
        ext_modules = []

setup(ext_modules=ext_modules)
