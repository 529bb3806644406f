import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext = Extension(
        "mmpcqa.kernels._ckernels",
        ["src/mmpcqa/kernels/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        # -ffp-contract=off keeps float arithmetic bit-identical with the
        # NumPy fallback (no fused multiply-add).
        extra_compile_args=["-O3", "-ffp-contract=off"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        optional=True,
    )
    ext_modules = cythonize([ext], language_level=3)

setup(ext_modules=ext_modules)
