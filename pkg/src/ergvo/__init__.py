"""Optical spectra and coherence analysis for Er3+ in antiferromagnetic GdVO4."""

__version__ = "0.1.0"
