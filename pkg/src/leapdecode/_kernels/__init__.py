"""Hot kernels, compiled when available.

The Cython extension ``_ckernels`` is preferred; if it is missing (not built)
or ``LEAPDECODE_PURE_PYTHON=1`` is set, the numpy implementations in
``_pykernels`` are used instead. ``BACKEND`` names the active one.
"""

import os

from . import _pykernels as python

if os.environ.get("LEAPDECODE_PURE_PYTHON", "") not in ("", "0"):
    compiled = None
else:
    try:
        from . import _ckernels as compiled
    except ImportError:  # extension not built
        compiled = None

_active = compiled if compiled is not None else python
BACKEND = "cython" if compiled is not None else "python"

splitmix64_raw = _active.splitmix64_raw
splitmix64_uniform = _active.splitmix64_uniform
masked_attention = _active.masked_attention
chain_posteriors = _active.chain_posteriors
lookahead_agrees = _active.lookahead_agrees

__all__ = [
    "BACKEND",
    "compiled",
    "python",
    "splitmix64_raw",
    "splitmix64_uniform",
    "masked_attention",
    "chain_posteriors",
    "lookahead_agrees",
]
