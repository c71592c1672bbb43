"""Desk-scale multilingual translation with a sliced, trainable codebook.

An encoder-decoder transformer whose encoder latent space is softly
discretized against a learned codebook, together with the training loop,
beam-search inference, synthetic multilingual data generation, and the
analysis suite (code distributions, code translation export, PCA
clustering diagnostics, cluster-center inference).
"""

from .autodiff import Tape, Tensor, backward, stop_gradient, straight_through

__version__ = "0.1.0"

__all__ = [
    "Tape",
    "Tensor",
    "backward",
    "stop_gradient",
    "straight_through",
    "__version__",
]
