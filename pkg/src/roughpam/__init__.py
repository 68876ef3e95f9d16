"""Feynman-Kac simulation of the parabolic Anderson model with rough Gaussian noise."""

__version__ = "0.1.0"
