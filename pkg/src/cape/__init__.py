"""Compositional zero-shot learning with attention-propagated composition embeddings."""
from .kernels import BACKEND as KERNEL_BACKEND
from .tensor import Tensor, no_grad

__version__ = "0.1.0"

__all__ = ["Tensor", "no_grad", "KERNEL_BACKEND", "__version__"]
