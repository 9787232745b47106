"""Boundary-suppressed k-means activation quantization and an in-memory
nonlinear ramp ADC behavioral model."""

__version__ = "0.1.0"
