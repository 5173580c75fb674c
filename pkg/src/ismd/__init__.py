"""Motor-current fault diagnosis from imbalanced, scarce, multi-domain data."""

__version__ = "0.1.0"
