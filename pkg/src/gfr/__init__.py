"""Desk-scale staged training of a vision backbone inside a small multimodal model."""

__version__ = "0.1.0"
