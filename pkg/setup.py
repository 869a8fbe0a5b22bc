#!/usr/bin/env python
import os
from setuptools import setup


def read(fname):
    return open(os.path.join(os.path.dirname(__file__), fname)).read()


setup(name='EffDiff',
    version='0.1',
    description='Effective diffusivity of passive tracers with stochastic splitting integrators',
    license = "Apache",
    packages=['effdiff'],
    python_requires='>=3.8',
    install_requires=[
        'numpy>=1.22',
        'scipy>=1.12',
        'pydantic>=2.0',
    ],
    extras_require={
        'test': ['pytest', 'sympy'],
    },
    entry_points={
        'console_scripts': ['effdiff=effdiff.expcli:main'],
    },
    long_description=read('README.md'),
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Topic :: Scientific/Engineering :: Physics",
        "License :: OSI Approved :: Apache Software License",
    ],
)
