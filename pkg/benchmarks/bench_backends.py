"""Compare the compiled kernel backend against the pure-Python fallback.

Run:  python3 benchmarks/bench_backends.py
"""

import time

import numpy as np

import wecdesk.plant as plant
import wecdesk.waves as waves
from wecdesk.kernels import _py

try:
    from wecdesk.kernels import _native
except ImportError:
    _native = None


def time_call(fn, *args, repeat=3):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    p = plant.load_plant_params("desk6dof-v1")
    rows = []

    for label, mode, ndir in (("irregular 64", "irregular", 1), ("spread 64x12", "spread", 12)):
        ws = waves.make_wave_set(tp=9.0, hs=2.0, mode=mode, angle_deg=20.0, seed=1)
        wa = plant._wave_arrays(ws)
        sd_args = (
            np.zeros(6), np.zeros(6), 0.0, 0.05, 20_000,
            p.inverse_mass, p.hydrostatic_stiffness, p.linear_damping,
            p.excitation_gain, p.anchor_positions, p.attachment_points,
            p.rest_lengths, p.locked_dofs, p.force_limit, *wa,
            np.full(3, 2e4), np.full(3, 3e4), 4000,
        )
        t_py = time_call(_py.run_sd_episode, *sd_args, repeat=1)
        t_cy = time_call(_native.run_sd_episode, *sd_args) if _native else float("nan")
        rows.append((f"sd episode 1000 s, {label}", t_py, t_cy))

        t = np.linspace(0.0, 2000.0, 20_001)
        wf_args = (ws.amplitude, ws.omega, ws.wavenumber,
                   np.cos(ws.direction), np.sin(ws.direction), ws.phase, 0.0, 0.0, t)
        t_py = time_call(_py.wave_fields, *wf_args)
        t_cy = time_call(_native.wave_fields, *wf_args) if _native else float("nan")
        rows.append((f"wave fields 20k samples, {label}", t_py, t_cy))

    print(f"{'benchmark':<40} {'python':>10} {'compiled':>10} {'speedup':>8}")
    for name, t_py, t_cy in rows:
        speed = t_py / t_cy if t_cy == t_cy and t_cy > 0 else float("nan")
        print(f"{name:<40} {t_py:>9.3f}s {t_cy:>9.3f}s {speed:>7.1f}x")
    if _native is None:
        print("compiled backend not built; only the fallback was timed")


if __name__ == "__main__":
    main()
