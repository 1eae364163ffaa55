"""Augmentation and generative-synthesis pipeline for killer-whale call detection."""

__version__ = "0.1.0"
