"""Molecular graph variational autoencoder engine."""

__version__ = "0.1.0"
