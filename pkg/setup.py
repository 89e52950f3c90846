import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("CPSFALSIFY_PURE_PYTHON", "") in ("", "0"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [Extension("cpsfalsify._ckernels", ["src/cpsfalsify/_ckernels.pyx"],
                       include_dirs=[np.get_include()],
                       extra_compile_args=["-O3"])],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
