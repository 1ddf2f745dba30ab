"""Per-leg spring-damper baseline controller and its grid-search tuner.

The baseline force law on each leg is a spring plus damper acting against
leg extension: the generator force is ``k * extension + c * extension_rate``
and the force applied to the body along the leg is its negative. Tuning is a
deterministic grid search that replays one fixed-seed episode per grid point
and keeps the point with the highest mean captured power.
"""

from dataclasses import dataclass

import numpy as np

from . import plant as _plant
from . import waves as _waves
from . import kernels as _kernels
from .errors import ConfigError, TuningFailedError

DEFAULT_SETTLE_S = 200.0


@dataclass(frozen=True)
class SdParams:
    """Per-leg spring and damper coefficients, one entry per leg."""

    spring_k: np.ndarray
    damping_c: np.ndarray

    def __post_init__(self):
        k = np.atleast_1d(np.asarray(self.spring_k, dtype=float)).copy()
        c = np.atleast_1d(np.asarray(self.damping_c, dtype=float)).copy()
        if k.size == 1:
            k = np.repeat(k, 3)
        if c.size == 1:
            c = np.repeat(c, 3)
        if k.shape != (3,) or c.shape != (3,):
            raise ConfigError("spring_k and damping_c must be scalars or 3-vectors")
        if not (np.all(np.isfinite(k)) and np.all(np.isfinite(c))):
            raise ConfigError("spring-damper coefficients must be finite")
        if np.any(c < 0):
            raise ConfigError("damping_c must be >= 0")
        k.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "spring_k", k)
        object.__setattr__(self, "damping_c", c)


def sd_force(pto, params, force_limit=np.inf):
    """Body-applied leg force -(k*ext + c*extvel), clamped to force_limit."""
    gen = params.spring_k * pto.extension + params.damping_c * pto.velocity
    return np.clip(-gen, -force_limit, force_limit)


@dataclass(frozen=True)
class SdEpisodeResult:
    """Outcome of one spring-damper episode after the settle window."""

    mean_power: float  # three-leg average of F_gen * v_pto, W
    total_power: float  # sum over legs, = 3 * mean_power
    per_leg_energy: np.ndarray  # J extracted per leg over the counted window
    yaw_rms: float  # rad
    counted_duration: float  # s of the scoring window
    diverged: bool


def evaluate_sd_episode(
    plant_params,
    wave_set,
    sd_params,
    duration,
    settle=DEFAULT_SETTLE_S,
    dt=_plant.PHYSICS_DT,
):
    """Run one SD-controlled episode and score power and yaw after settling.

    The SD law is re-evaluated every physics substep, so the baseline is not
    handicapped by the coarser control interval used for learned policies.
    """
    if duration <= 0:
        raise ConfigError("duration must be positive")
    n_steps = int(round(duration / dt))
    settle_steps = int(round(settle / dt))
    if settle_steps >= n_steps:
        raise ConfigError("settle window must be shorter than the episode")
    p = plant_params
    wamp, womega, wk, wcos, wsin, wphi = _plant._wave_arrays(wave_set)
    state = _plant.PlantState.rest()
    q, v, t, leg_extracted, yaw_sq, counted, ok = _kernels.run_sd_episode(
        state.pose,
        state.velocity,
        0.0,
        dt,
        n_steps,
        p.inverse_mass,
        p.hydrostatic_stiffness,
        p.linear_damping,
        p.excitation_gain,
        p.anchor_positions,
        p.attachment_points,
        p.rest_lengths,
        p.locked_dofs,
        p.force_limit,
        wamp,
        womega,
        wk,
        wcos,
        wsin,
        wphi,
        np.asarray(sd_params.spring_k, dtype=float),
        np.asarray(sd_params.damping_c, dtype=float),
        settle_steps,
    )
    counted_duration = counted * dt
    if counted == 0:
        return SdEpisodeResult(0.0, 0.0, np.zeros(3), 0.0, 0.0, not ok)
    total = float(np.sum(leg_extracted)) / counted_duration
    return SdEpisodeResult(
        mean_power=total / 3.0,
        total_power=total,
        per_leg_energy=np.asarray(leg_extracted),
        yaw_rms=float(np.sqrt(yaw_sq / counted)),
        counted_duration=counted_duration,
        diverged=not ok,
    )


def default_spring_grid(magnitude_lo=3e2, magnitude_hi=3e5, n=16):
    """Signed log-spaced spring values: negatives, zero, positives.

    Negative spring settings are real operating points here: softening the
    tether lets the buoy resonate below its natural frequency, which the
    tuner needs for long-period seas.
    """
    pos = np.geomspace(magnitude_lo, magnitude_hi, (n - 1) // 2 + (n - 1) % 2)
    neg = -np.geomspace(magnitude_lo, magnitude_hi, (n - 1) // 2)[::-1]
    return np.concatenate([neg, [0.0], pos])


def default_damper_grid(lo=1e2, hi=1e6, n=16):
    return np.geomspace(lo, hi, n)


def _refine_values(values, best_idx, n, signed):
    """New search values spanning the neighbors of the current best point."""
    lo = values[max(best_idx - 1, 0)]
    hi = values[min(best_idx + 1, len(values) - 1)]
    if lo == hi:
        return np.full(n, lo)
    if signed or lo <= 0 or hi <= 0:
        return np.linspace(lo, hi, n)
    return np.geomspace(lo, hi, n)


def tune_sd(
    plant_params,
    tp,
    hs,
    mode="irregular",
    angle_deg=0.0,
    seed=0,
    k_values=None,
    c_values=None,
    duration=2000.0,
    settle=DEFAULT_SETTLE_S,
    n_components=64,
    refine=0,
    dt=_plant.PHYSICS_DT,
):
    """Grid-search (k, c) maximizing mean captured power on one seeded episode.

    Identical coefficients are used on all three legs during the search; the
    returned SdParams carries them per leg so callers may override
    individually. ``refine`` adds zoom stages bracketing the best point, each
    re-searched at the same grid resolution. Deterministic given inputs.
    """
    k_values = default_spring_grid() if k_values is None else np.asarray(k_values, dtype=float)
    c_values = default_damper_grid() if c_values is None else np.asarray(c_values, dtype=float)
    if k_values.size == 0 or c_values.size == 0:
        raise ConfigError("empty tuning grid")
    wave_set = _waves.make_wave_set(
        tp=tp, hs=hs, mode=mode, angle_deg=angle_deg, seed=seed, n_components=n_components
    )

    def search(ks, cs):
        best = None
        for i, k in enumerate(ks):
            for j, c in enumerate(cs):
                if c < 0:
                    continue
                res = evaluate_sd_episode(
                    plant_params,
                    wave_set,
                    SdParams(spring_k=k, damping_c=c),
                    duration=duration,
                    settle=settle,
                    dt=dt,
                )
                if res.diverged:
                    continue
                if best is None or res.mean_power > best[0]:
                    best = (res.mean_power, i, j)
        return best

    ks, cs = k_values, c_values
    best = search(ks, cs)
    if best is None:
        raise TuningFailedError("every grid point diverged")
    for _ in range(int(refine)):
        _, bi, bj = best
        ks = _refine_values(ks, bi, len(ks), signed=True)
        cs = np.clip(_refine_values(cs, bj, len(cs), signed=False), 0.0, None)
        refined = search(ks, cs)
        if refined is None:
            break
        best = refined
    power, bi, bj = best
    tuned = SdParams(spring_k=ks[bi], damping_c=cs[bj])
    return tuned, power


# Tuned-parameter cache: one CSV row per evaluated wave cell.
CACHE_HEADER = "Tp,Hs,angle,k1,c1,k2,c2,k3,c3,power"


def save_sd_cache(path, rows):
    """rows: iterable of (tp, hs, angle, SdParams, power)."""
    lines = [CACHE_HEADER]
    for tp, hs, angle, params, power in rows:
        k, c = params.spring_k, params.damping_c
        fields = [tp, hs, angle, k[0], c[0], k[1], c[1], k[2], c[2], power]
        lines.append(",".join(repr(float(x)) for x in fields))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_sd_cache(path):
    """Returns {(tp, hs, angle): (SdParams, power)} with float keys as stored."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CACHE_HEADER:
            raise ConfigError(f"unexpected cache header: {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            vals = [float(x) for x in line.split(",")]
            if len(vals) != 10:
                raise ConfigError("malformed cache row")
            tp, hs, angle = vals[0], vals[1], vals[2]
            params = SdParams(
                spring_k=np.array(vals[3:9:2]), damping_c=np.array(vals[4:9:2])
            )
            out[(tp, hs, angle)] = (params, vals[9])
    return out


def lookup_or_tune(
    cache_path, plant_params, tp, hs, mode="irregular", angle_deg=0.0, seed=0, **tune_kwargs
):
    """Fetch tuned params from the cache file, tuning and appending on a miss.

    The cache key is (Tp, Hs, angle); episodes synthesized in a different
    mode at the same key reuse the cached coefficients.
    """
    import os

    rows = {}
    if cache_path is not None and os.path.exists(cache_path):
        rows = load_sd_cache(cache_path)
    key = (float(tp), float(hs), float(angle_deg))
    if key in rows:
        return rows[key]
    params, power = tune_sd(
        plant_params, tp, hs, mode=mode, angle_deg=angle_deg, seed=seed, **tune_kwargs
    )
    if cache_path is not None:
        rows[key] = (params, power)
        save_sd_cache(
            cache_path,
            [(k[0], k[1], k[2], p, pw) for k, (p, pw) in sorted(rows.items())],
        )
    return params, power
