"""Learning-on-less: random rectangular input masking for generated-image detectors."""

__version__ = "0.1.0"
