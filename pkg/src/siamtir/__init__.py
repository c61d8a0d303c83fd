"""Multi-level similarity Siamese tracking for thermal-infrared-style imagery."""

__version__ = "0.1.0"
