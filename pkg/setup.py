#!/usr/bin/env python3
"""
Setup script for massem package
"""

from setuptools import setup, find_packages
import os

# Read the README file for long description
readme_path = os.path.join(os.path.dirname(__file__), 'README.md')
if os.path.exists(readme_path):
    with open(readme_path, 'r', encoding='utf-8') as f:
        long_description = f.read()
else:
    long_description = "Mass-adaptive Hamiltonian samplers with Monte Carlo EM"

setup(
    name="massem",
    version="0.1.0",
    description="massem - Mass-adaptive HMC and stochastic-gradient samplers with Monte Carlo EM",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["examples", "examples.*"]),
    py_modules=['massem', 'config', 'harness'],
    python_requires=">=3.9",
    install_requires=[
        "numpy>=1.22.0",
        "scipy>=1.10.0",
        "PyYAML>=5.4.0",
    ],
    entry_points={
        'console_scripts': [
            'massem=massem:main',
        ],
    },
    classifiers=[
        "Development Status :: 4 - Beta",
        "Environment :: Console",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Operating System :: MacOS",
        "Operating System :: POSIX :: Linux",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
    keywords="mcmc hamiltonian monte-carlo sghmc sgnht nose-poincare mcem mass-matrix",
    include_package_data=True,
    data_files=[
        (os.path.join('share', 'massem'), ['massem_default.yaml']),
    ],
    package_data={
        '': ['*.yaml', '*.yml', '*.json', 'massem_default.yaml'],
    },
)
