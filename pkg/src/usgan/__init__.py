"""usgan: from-scratch stacked-GAN ultrasound synthesis and the
augmented-classification experiment harness built around it."""

from .kernels import BACKEND as kernel_backend

__all__ = ["kernel_backend"]
__version__ = "0.1.0"
