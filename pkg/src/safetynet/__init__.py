"""Physics-informed estimation of regions of attraction."""

__version__ = "0.1.0"
