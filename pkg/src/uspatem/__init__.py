"""U-SpaTem: U-Net segmentation with a spatio-temporal cross-attention
context transformer, built on a self-contained reverse-mode tensor engine."""

__version__ = "0.1.0"

from .rng import Rng
from .tensor import Parameter, Tensor

__all__ = ["Rng", "Tensor", "Parameter", "__version__"]
