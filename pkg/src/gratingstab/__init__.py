"""Quasi-periodic Helmholtz scattering by perfectly conducting gratings."""

__version__ = "0.1.0"
