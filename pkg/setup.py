from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize
except ImportError:  # build without the compiled core
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "sparse_ilc._kernels",
                ["src/sparse_ilc/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
