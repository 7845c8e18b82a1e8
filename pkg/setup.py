from setuptools import setup, find_packages

setup(
    name="mmvp",
    version="0.1.0",
    description="Motion-matrix video prediction with a small numpy autodiff core",
    packages=find_packages(exclude=["tests", "tests.*", "examples", "examples.*"]),
    install_requires=[
        "numpy>=1.22",
        "rich>=13.0",
        "click>=8.0",
        "scikit-image>=0.19",
    ],
    extras_require={
        "test": ["pytest>=7.0"],
    },
    entry_points={
        "console_scripts": [
            "mmvp=mmvp.cli:cli",
        ],
    },
    python_requires=">=3.9",
)
