import os

import numpy as np
from setuptools import Extension, setup

ext_kw = dict(
    include_dirs=[np.get_include()],
    extra_compile_args=["-O3", "-g0"],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
)

ext_modules = []
if os.environ.get("TRANSITION_CALIB_NO_EXT", "") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:  # pure-Python install
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [Extension("transition_calib._kernels",
                       ["src/transition_calib/_kernels.pyx"], **ext_kw)],
            language_level=3,
        )

setup(package_dir={"": "src"}, ext_modules=ext_modules)
