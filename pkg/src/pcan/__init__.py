"""Point-cloud place recognition with contextual attention over NetVLAD."""

__version__ = "0.1.0"
