"""Semi-synthetic benchmark for uplift modelling under bias."""

__version__ = "0.1.0"
