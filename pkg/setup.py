import os

import numpy as np
from Cython.Build import cythonize
from setuptools import setup
from setuptools.extension import Extension

# PCGSCREEN_PORTABLE=1 drops -march=native for redistributable builds
flags = ["-O3"]
if not os.environ.get("PCGSCREEN_PORTABLE"):
    flags.append("-march=native")

extensions = [
    Extension(
        "pcgscreen.autodiff._kernels",
        ["src/pcgscreen/autodiff/_kernels.pyx"],
        depends=["src/pcgscreen/autodiff/conv_impl.h"],
        include_dirs=[np.get_include(), "src/pcgscreen/autodiff"],
        extra_compile_args=flags,
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        optional=True,
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": "3"},
    )
)
