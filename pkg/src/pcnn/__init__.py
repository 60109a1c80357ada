"""Point-cloud convolutional networks built from extension and restriction operators."""

__version__ = "0.1.0"
