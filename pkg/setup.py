import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("ESTFUN_NO_EXT", "") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "estfun._ckernels",
                    sources=["src/estfun/_ckernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    # keep results bit-identical to the pure-Python fallback
                    extra_compile_args=["-O2", "-ffp-contract=off", "-fno-fast-math"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )

setup(ext_modules=ext_modules)
