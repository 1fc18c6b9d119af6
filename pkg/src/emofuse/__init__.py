"""Tri-modal conversation emotion recognition: enhancement, cross-modal
graphs, gated attention fusion, and a reproducible experiment harness."""

from .model import ModelConfig, Model  # noqa: F401

__version__ = "0.1.0"
