from setuptools import setup, find_packages

setup(name="aeda",
      version="0.0.1",
      packages=find_packages(exclude=["tests", "examples*"]),
      install_requires=[
          "torch>=1.11.0",
          "torchvision>=0.12.0",
          "omegaconf>=2.0.0",
          "numpy>=1.21",
          "einops>=0.6.0",
          "scikit-learn>=1.0",
          "scipy>=1.7",
          "pandas>=1.3",
      ],
      extras_require={"test": ["pytest>=7.0"]},
      entry_points={"console_scripts": ["aeda=scripts.cli:main"]})
