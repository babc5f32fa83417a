"""ShelfNet workbench: executable block graphs, cost/path analysis, toy training."""

__version__ = "0.1.0"

from .autograd import Parameter, Tensor4, backward, no_grad  # noqa: F401
