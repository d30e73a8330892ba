"""
setup.py for yoro-grounding

All metadata lives in pyproject.toml; this shim keeps legacy
``python setup.py develop`` installs working.
"""

from setuptools import setup

setup()
