"""Noisy-label learning with prior-guided sample dividing and pseudo-label refinement."""

__version__ = "0.1.0"
