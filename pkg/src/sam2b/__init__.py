"""Reliability-aware multi-modal beam prediction for UAV mmWave links."""

from .sensors import MODALITIES

__all__ = ["MODALITIES"]
__version__ = "0.1.0"
