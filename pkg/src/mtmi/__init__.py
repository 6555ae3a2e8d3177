"""Multi-target multiple-instance learning of sub-pixel target signatures."""

__version__ = "0.1.0"
