"""Multimodal dependence estimation: DTC bounds, FMCA objectives and matrix-entropy estimators."""

__version__ = "0.1.0"
