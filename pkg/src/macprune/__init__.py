"""Side-channel leakage of pixel-pruned MAC sequences and the pruning defense."""

__version__ = "0.1.0"
