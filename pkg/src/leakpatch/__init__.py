"""Side-channel leakage detection and LLM-driven patching pipeline."""

__version__ = "0.1.0"
