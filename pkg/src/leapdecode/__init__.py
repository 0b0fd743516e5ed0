"""Lookahead early-convergence parallel decoding for masked diffusion LMs."""

from ._kernels import BACKEND as KERNEL_BACKEND
from .core import DecodeConfig, DecodeTrace, SequenceState, Vocab, new_state
from .decoding import convergence_target, run_decode

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND",
    "DecodeConfig",
    "DecodeTrace",
    "SequenceState",
    "Vocab",
    "new_state",
    "run_decode",
    "convergence_target",
]
