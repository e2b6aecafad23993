from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # build the pure-Python package only
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "adaptive_tickets._kernels",
                ["src/adaptive_tickets/_kernels.pyx"],
                # no fp contraction: keeps the Adam kernel bit-identical to numpy
                extra_compile_args=["-O2", "-ffp-contract=off"],
                optional=True,
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
