"""
Setup script for memgan.

This package builds memorizing generators that fool encoder-decoder GAN
objectives, compiles them into sparse ReLU networks and measures how well a
bounded-capacity discriminator can tell them apart from the real distribution.
"""

from setuptools import setup, find_packages
from pathlib import Path

# Read the README file
this_directory = Path(__file__).parent
long_description = (this_directory / "README.md").read_text(encoding="utf-8")

# Read requirements
requirements = []
with open("requirements.txt", "r", encoding="utf-8") as f:
    for line in f:
        line = line.strip()
        if line and not line.startswith("#"):
            requirements.append(line)

# Development requirements
dev_requirements = [
    "pytest>=7.0.0",
    "pytest-cov>=4.0.0",
    "black>=22.0.0",
    "flake8>=5.0.0",
    "mypy>=0.991",
    "pre-commit>=2.20.0",
]

setup(
    name="memgan",
    version="0.1.0",
    description="Memorizing generators, sparse ReLU compilation and adversarial evaluation of encoder-decoder GAN objectives",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests", "tests.*"]),
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
    python_requires=">=3.10",
    install_requires=requirements,
    extras_require={"dev": dev_requirements},
    entry_points={
        "console_scripts": [
            "memgan=memgan.cli:main",
        ],
    },
    zip_safe=False,
    keywords=[
        "gan",
        "bigan",
        "mode collapse",
        "relu",
        "sparse",
        "birthday paradox",
        "monte carlo",
    ],
)
