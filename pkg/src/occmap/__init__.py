"""Spectrum occupancy mapping from sparse sensor measurements.

The pipeline runs terrain -> field -> occupancy ground truth -> sensor
readings -> LLR image -> network decision map, with classical
interpolators and evaluation metrics alongside.
"""

__version__ = "0.1.0"
