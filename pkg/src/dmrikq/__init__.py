"""Joint k-q space reconstruction of multi-shot diffusion MRI with a denoising-autoencoder prior."""

__version__ = "0.1.0"
