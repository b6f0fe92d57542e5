"""Chain-of-thought audio-caption datasets, modal-mismatch inference and caption metrics."""

__version__ = "0.1.0"
