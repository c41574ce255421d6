"""boxforge: box-conditioned diffusion synthesis of paired images and segmentation masks."""

__version__ = "0.1.0"
