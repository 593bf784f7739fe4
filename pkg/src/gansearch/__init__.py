"""Two-stage evolutionary architecture search for small dense GANs."""

__version__ = "0.1.0"
