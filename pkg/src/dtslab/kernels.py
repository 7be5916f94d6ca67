"""Backend selection for the hot kernels.

numba is used when importable unless ``DTSLAB_DISABLE_NUMBA=1`` is set, in
which case the pure-numpy twins run instead. ``BACKEND`` records the choice.
"""
import os

from . import _kernels_numpy

_NUMBA_OFF = os.environ.get("DTSLAB_DISABLE_NUMBA", "0").strip().lower() in ("1", "true", "yes")

if _NUMBA_OFF:
    _impl = _kernels_numpy
    BACKEND = "numpy"
else:
    try:
        from . import _kernels_numba as _impl
        BACKEND = "numba"
    except ImportError:  # pragma: no cover - numba is a hard dependency
        _impl = _kernels_numpy
        BACKEND = "numpy"

STATUS_MAX_ITER = _kernels_numpy.STATUS_MAX_ITER
STATUS_CONVERGED = _kernels_numpy.STATUS_CONVERGED
STATUS_STALLED = _kernels_numpy.STATUS_STALLED
STATUS_KEY_CHANGED = _kernels_numpy.STATUS_KEY_CHANGED

induced = _impl.induced
gain_bias = _impl.gain_bias
ppi_iterate = _impl.ppi_iterate
rollout_rewards = _impl.rollout_rewards
hitting_lengths = _impl.hitting_lengths
all_pairs_max_hitting = _impl.all_pairs_max_hitting
