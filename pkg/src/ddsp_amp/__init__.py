"""Differentiable DSP guitar amplifier modeling."""

__version__ = "0.1.0"
