"""Backend selection for the hot sampling kernels.

The compiled Cython core is preferred when its extension module built; the
pure-NumPy fallback is always available. ``PLANESYNTH_KERNELS=py|cy`` forces a
backend at import time, and :func:`use_backend` switches it at runtime (used
by the benchmark and the backend-equivalence tests).
"""

import os

from . import _bilinear_np

MODE_CLAMP = _bilinear_np.MODE_CLAMP
MODE_ZERO = _bilinear_np.MODE_ZERO

try:
    from . import _bilinear_cy
except ImportError:  # pragma: no cover - depends on the build environment
    _bilinear_cy = None

_BACKENDS = {"py": _bilinear_np}
if _bilinear_cy is not None:
    _BACKENDS["cy"] = _bilinear_cy


def available_backends():
    return tuple(sorted(_BACKENDS))


def _default_backend():
    requested = os.environ.get("PLANESYNTH_KERNELS", "auto")
    if requested in _BACKENDS:
        return requested
    if requested not in ("auto", ""):
        raise ValueError(
            f"unknown PLANESYNTH_KERNELS={requested!r}; "
            f"available: {available_backends()}"
        )
    return "cy" if "cy" in _BACKENDS else "py"


_active = _default_backend()


def active_backend():
    return _active


def use_backend(name):
    """Select a kernel backend by name ('py' or 'cy')."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {available_backends()}")
    _active = name


def bilinear_forward(values, xs, ys, mode):
    return _BACKENDS[_active].bilinear_forward(values, xs, ys, mode)


def bilinear_backward(values, xs, ys, gout, mode):
    return _BACKENDS[_active].bilinear_backward(values, xs, ys, gout, mode)
