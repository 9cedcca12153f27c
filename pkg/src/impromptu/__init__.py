"""Visual analogy workbench: procedural combinatorial benchmarks, a spectrum
of in-context image learners, meta-training, evaluation, and serving."""

__version__ = "0.1.0"

from .rng import RngStream
from .tensor import Tensor, no_grad

__all__ = ["RngStream", "Tensor", "no_grad", "__version__"]
