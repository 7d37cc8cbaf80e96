"""freqtrain: frequency-domain curriculum training engine for small visual models."""

__version__ = "0.1.0"
