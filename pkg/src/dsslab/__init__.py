"""Self-similar profile construction toolkit for incompressible flow models."""

__version__ = "0.1.0"
