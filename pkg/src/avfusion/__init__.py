"""Soft-attention stream alignment and class-anchored attention pooling over LSTM encoders."""

__version__ = "0.1.0"
