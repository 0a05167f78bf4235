"""Radial-angular flow matching and its Gaussian and radial-source baselines."""

__version__ = "0.1.0"
