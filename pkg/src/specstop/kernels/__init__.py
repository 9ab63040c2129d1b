"""Hot-kernel backend selection.

The compiled Cython backend is preferred when built; the numpy fallback is
used otherwise. Set SPECSTOP_BACKEND=python to force the fallback (useful
for the backend-comparison benchmark and for parity tests).
"""

import os

if os.environ.get("SPECSTOP_BACKEND", "").lower() in ("py", "python"):
    from . import _pykernels as _impl
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
    except ImportError:
        from . import _pykernels as _impl  # type: ignore[no-redef]

BACKEND = _impl.BACKEND_NAME
causal_attention = _impl.causal_attention
attention_step = _impl.attention_step
softmax_cross_entropy = _impl.softmax_cross_entropy

__all__ = [
    "BACKEND",
    "causal_attention",
    "attention_step",
    "softmax_cross_entropy",
]
