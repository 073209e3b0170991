from setuptools import Extension, setup

# The accelerator is optional: without a C compiler the pure-Python scanner is used.
setup(
    ext_modules=[
        Extension("objguard.stream._skip", ["src/objguard/stream/_skip.c"], optional=True),
    ]
)
