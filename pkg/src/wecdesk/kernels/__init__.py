"""Hot-loop kernels with a compiled core and a pure-Python fallback.

Three entry points are exported:

- ``wave_fields``: superpose wave components into elevation, elevation rate
  and the two surface slopes at a point, over an array of times.
- ``run_control_step``: advance the plant through the physics substeps of one
  control step under a held (zero-order hold) PTO force vector.
- ``run_sd_episode``: run a whole spring-damper episode with the SD law
  recomputed every physics substep.

The compiled Cython module is preferred when importable; setting the
environment variable ``WECDESK_BACKEND=python`` forces the fallback. Both
backends implement identical semantics; results agree to rounding error.
"""

import os

if os.environ.get("WECDESK_BACKEND", "").lower() in ("python", "py", "numpy"):
    from . import _py as _impl

    BACKEND = "python"
else:
    try:
        from . import _native as _impl

        BACKEND = "cython"
    except ImportError:
        from . import _py as _impl

        BACKEND = "python"

wave_fields = _impl.wave_fields
run_control_step = _impl.run_control_step
run_sd_episode = _impl.run_sd_episode


def backend() -> str:
    """Name of the active kernel backend, "cython" or "python"."""
    return BACKEND
