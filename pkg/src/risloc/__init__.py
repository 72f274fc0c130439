"""RIS-aided near-field downlink position and velocity estimation."""

__version__ = "0.1.0"
