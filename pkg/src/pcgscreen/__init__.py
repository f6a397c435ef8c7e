"""Phonocardiogram screening: preprocessing, inception-style 1D CNN, transfer learning, evaluation."""

__version__ = "0.1.0"
