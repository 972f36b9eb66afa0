"""Pseudospectral lab for Boussinesq/Boussinesq internal-wave systems."""

__version__ = "0.1.0"
