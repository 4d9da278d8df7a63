import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("GUIDEDNEST_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "guidednest._ckernels",
                    ["src/guidednest/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    # keep float rounding identical to the numpy fallback
                    extra_compile_args=["-O2", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": 3},
        )

setup(ext_modules=ext_modules)
