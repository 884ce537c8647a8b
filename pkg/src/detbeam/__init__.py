"""Determinantal beam search and baseline set decoders for sequence models."""

__version__ = "0.1.0"
