#!/usr/bin/env python
# -*- encoding: utf-8 -*-

__author__ = "vtcal developers"
__version__ = "0.1.0"

from codecs import open
from os.path import abspath, dirname, join

from setuptools import setup

here = abspath(dirname(__file__))

# Get the long description from the README file
with open(join(here, "README.rst"), encoding="utf-8") as f:
    long_description = f.read()

REQUIRES = ["numpy>=1.25", "scipy>=1.9", "Pillow>=9.0"]

setup(
    name="vtcal",
    version=__version__,
    description="Training-free vision-token calibration on a toy decoder",
    long_description=long_description,
    classifiers=[
        "Development Status :: 3 - Alpha",
        "License :: OSI Approved :: GNU General Public License v3 or later (GPLv3+)",  # noqa: E501
        "Programming Language :: Python :: 3",
    ],
    author=__author__,
    license="GPLv3+",
    packages=["vtcal"],
    install_requires=REQUIRES,
    extras_require={"dev": ["tox", "pre-commit", "pytest", "hypothesis"]},
    entry_points={"console_scripts": ["vtcal = vtcal.cli:main"]},
    python_requires=">=3.9",
)
