"""Binary neural networks with input-dependent sign thresholds, on a small numpy autograd."""

from .autograd import Tensor, no_grad

__version__ = "0.1.0"
__all__ = ["Tensor", "no_grad", "__version__"]
