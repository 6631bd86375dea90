"""Bidirectional text style transfer trained from parallel pairs and style-labeled text."""

__version__ = "0.1.0"
