"""EEG-conditioned BOLD diffusion pipeline with temporal super-resolution."""

__version__ = "0.1.0"
