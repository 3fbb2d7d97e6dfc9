"""Parallel dual-encoder speech recognizer with LoRA adaptation and a prompted causal decoder."""

__version__ = "0.1.0"
