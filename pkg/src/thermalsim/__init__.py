"""Numerical experiments on q-expectation dynamics, spectra and measurement."""

__version__ = "0.1.0"
