"""Attention-based encoder-decoder toolkit on numpy.

Modules:
    tensor: float64 tensors with reverse-mode autodiff and gradient checks.
    cells: tanh RNN and GRU transitions.
    encoders: bidirectional RNN, mean-pool and point-set encoders.
    attention: additive content and location-aware scoring with soft/hard readouts.
    decoder: attention decoder, greedy/beam/sampling and pointer decoding.
    training: maximum likelihood, REINFORCE and exact enumeration of the lower bound.
    tasks: seeded synthetic tasks with exact answers.
    config, checkpoint, export, cli: run configuration, persistence and the command line.
"""

from .model import ModelConfig, Seq2Seq
from .tensor import NumericError, ShapeError, Tensor

__version__ = "0.1.0"

__all__ = ["ModelConfig", "Seq2Seq", "Tensor", "NumericError", "ShapeError", "__version__"]
