"""Masked-token contrastive learning of music representations on log-mel spectrograms."""
from maskclr._accel import backend, set_backend

__version__ = "0.1.0"

__all__ = ["backend", "set_backend", "__version__"]
