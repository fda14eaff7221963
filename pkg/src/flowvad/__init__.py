"""Video anomaly detection by flow-guided next-frame prediction."""

__version__ = "0.1.0"
