"""Echo state network forecasts of transitions in a nine-mode shear-flow model."""

__version__ = "0.1.0"
