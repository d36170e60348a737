"""Toolkit for multi-teacher agglomerative distillation experiments at desk scale."""

__version__ = "0.1.0"
