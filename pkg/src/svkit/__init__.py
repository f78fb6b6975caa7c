"""Speaker verification toolkit.

Generative Gaussian PLDA scoring, a discriminative neural PLDA backend
trained with a differentiable detection cost, and an end-to-end tied-twin
TDNN model, with trial sampling, detection metrics, synthetic-data
generators, and a CLI experiment runner.
"""

__version__ = "0.1.0"

from . import checkpoint, data, e2e, errors, gplda, metrics, nn, nplda, sampling

__all__ = [
    "checkpoint",
    "data",
    "e2e",
    "errors",
    "gplda",
    "metrics",
    "nn",
    "nplda",
    "sampling",
]
