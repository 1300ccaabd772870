"""Self-supervised pre-training for sign-pose skeleton sequences:
motion-aware masked reconstruction plus momentum semantic alignment,
with a minimal autodiff core and synthetic-data harnesses."""

__version__ = "0.1.0"
