"""Zero-shot in-context dynamics forecasting for continuous-state MDPs."""

__version__ = "0.1.0"
