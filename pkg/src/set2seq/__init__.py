"""Set2Seq Transformer: permutation-aware representations of sequences of sets."""
__version__ = "0.1.0"

from ._kernels import backend
from .tensor import Graph, Tensor
