"""
tailcal Setup Configuration
"""

from setuptools import setup, find_packages

setup(
    name="tailcal",
    version="0.3.0",
    description="Tail-calibrated probabilistic forecast training and evaluation",
    python_requires=">=3.9",
    packages=find_packages(exclude=("tests", "tests.*")),
    install_requires=[
        "python-dotenv>=1.0.0",
        "pyyaml>=6.0.1",
        "pandas>=2.1.4",
        "numpy>=1.26",
        "scipy>=1.11",
        "scikit-learn>=1.3",
        "joblib>=1.3",
    ],
    extras_require={
        "dev": [
            "pytest>=7.4.3",
            "pytest-cov>=4.1.0",
            "pytest-mock>=3.12.0",
            "mypy>=1.7.1",
            "black>=23.12.0",
            "flake8>=6.1.0",
            "ipython>=8.18.1",
        ]
    },
    entry_points={
        "console_scripts": [
            "tailcal=tailcal.cli:main",
        ]
    },
)
