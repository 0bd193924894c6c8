"""Multimodal CNN-GRU-attention traffic flow forecasting with hand-written backprop."""

__version__ = "0.1.0"
