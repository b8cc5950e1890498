"""Receptive-field forecasting networks on a small numpy autodiff engine."""
from .tensor import Graph, Tensor, TapeError, no_grad
from .models import ARCHS, ModelConfig, TLNet

__version__ = "0.1.0"

__all__ = ["Graph", "Tensor", "TapeError", "no_grad", "ARCHS", "ModelConfig", "TLNet"]
