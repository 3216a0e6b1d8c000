"""Spatial tumor-microenvironment graphs from tile-level histology label maps,
with a GIN / self-attention / GCN response classifier and census statistics."""

__version__ = "0.1.0"
