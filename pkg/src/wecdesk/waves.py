"""Ocean wave synthesis: JONSWAP spectra, directional spreading, elevation fields.

A sea state is represented as a finite set of linear deep-water wave
components. Each component carries amplitude, angular frequency, wavenumber,
propagation direction and phase, and the free-surface elevation at a point is
the superposition

    eta(x, y, t) = sum_i a_i * cos(w_i * t - k_i * (x cos th_i + y sin th_i) + phi_i)

Components satisfy the deep-water dispersion relation w^2 = g k exactly by
construction. All randomness is drawn from ``numpy.random.default_rng(seed)``
so the same seed always reproduces the same sea.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate, special

from .errors import ConfigError

GRAVITY = 9.81  # m/s^2, pinned by the dispersion contract

_TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------------------
# Spectrum
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectrumParams:
    """JONSWAP spectrum parameters.

    Parameters
    ----------
    hs : float
        Significant wave height in meters (> 0).
    tp : float
        Peak period in seconds (> 0).
    gamma : float
        Peak enhancement factor (>= 1). 3.3 is the classic open-ocean value.
    """

    hs: float
    tp: float
    gamma: float = 3.3

    def __post_init__(self):
        if not (self.hs > 0.0):
            raise ConfigError(f"significant height must be positive, got {self.hs}")
        if not (self.tp > 0.0):
            raise ConfigError(f"peak period must be positive, got {self.tp}")
        if not (self.gamma >= 1.0):
            raise ConfigError(f"peak enhancement must be >= 1, got {self.gamma}")

    @property
    def fp(self) -> float:
        """Peak frequency in Hz."""
        return 1.0 / self.tp

    @property
    def m0(self) -> float:
        """Target variance of the sea surface, (Hs/4)^2."""
        return (self.hs / 4.0) ** 2

    @cached_property
    def alpha(self) -> float:
        """Scale factor calibrated so the zeroth moment integrates to (Hs/4)^2."""
        fp = self.fp
        unit, _ = integrate.quad(
            lambda f: _unit_density(f, fp, self.gamma),
            fp / 20.0,
            50.0 * fp,
            points=[0.8 * fp, fp, 1.2 * fp],
            limit=200,
            epsabs=0.0,
            epsrel=1e-10,
        )
        return self.m0 / unit


def _unit_density(f, fp, gamma):
    # JONSWAP shape with the leading scale set to 1.
    f = np.asarray(f, dtype=float)
    sigma = np.where(f <= fp, 0.07, 0.09)
    peak_arg = -((f - fp) ** 2) / (2.0 * sigma**2 * fp**2)
    base = GRAVITY**2 * _TWO_PI**-4 * f**-5 * np.exp(-1.25 * (fp / f) ** 4)
    return base * gamma ** np.exp(peak_arg)


def jonswap_density(f, params: SpectrumParams):
    """One-sided JONSWAP spectral density S(f) in m^2/Hz.

    ``f`` may be a scalar or an array of frequencies in Hz; every entry must be
    positive. The returned density is calibrated so that its zeroth moment
    over the full support equals (Hs/4)^2.
    """
    arr = np.asarray(f, dtype=float)
    if np.any(arr <= 0.0) or not np.all(np.isfinite(arr)):
        raise ConfigError("frequencies must be positive and finite")
    out = params.alpha * _unit_density(arr, params.fp, params.gamma)
    return float(out) if np.isscalar(f) else out


def dispersion_wavenumber(omega):
    """Deep-water wavenumber k = w^2 / g for angular frequency w (rad/s)."""
    omega = np.asarray(omega, dtype=float)
    return omega**2 / GRAVITY


# ---------------------------------------------------------------------------
# Component sets
# ---------------------------------------------------------------------------


@dataclass
class WaveComponentSet:
    """Immutable bundle of wave components plus provenance metadata.

    Arrays all share one length. ``meta`` records how the set was built
    (hs, tp, gamma, spreading exponent, seed) for export sidecars.
    """

    amplitude: np.ndarray
    omega: np.ndarray
    wavenumber: np.ndarray
    direction: np.ndarray
    phase: np.ndarray
    seed: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        arrays = []
        n = None
        for name in ("amplitude", "omega", "wavenumber", "direction", "phase"):
            a = np.ascontiguousarray(getattr(self, name), dtype=float)
            if a.ndim != 1:
                raise ConfigError(f"{name} must be one-dimensional")
            if n is None:
                n = a.size
            elif a.size != n:
                raise ConfigError("component arrays must share one length")
            object.__setattr__(self, name, a)
            arrays.append(a)
        if n == 0:
            raise ConfigError("component set must not be empty")
        if np.any(self.amplitude < 0.0):
            raise ConfigError("amplitudes must be non-negative")
        if np.any(self.omega <= 0.0):
            raise ConfigError("frequencies must be positive")
        k_expected = dispersion_wavenumber(self.omega)
        rel = np.max(np.abs(self.wavenumber - k_expected) / k_expected)
        if rel > 1e-9:
            raise ConfigError("wavenumbers violate the deep-water dispersion relation")
        for a in arrays:
            a.flags.writeable = False

    def __len__(self) -> int:
        return self.amplitude.size

    @property
    def variance(self) -> float:
        """Total surface variance carried by the components, sum(a^2)/2."""
        return float(np.sum(self.amplitude**2) / 2.0)


def discretize_spectrum(
    params: SpectrumParams,
    n_components: int = 64,
    f_range: tuple[float, float] | None = None,
    seed: int = 0,
    binning: str = "equal_energy",
    direction: float = 0.0,
) -> WaveComponentSet:
    """Discretize a JONSWAP spectrum into cosine components with random phases.

    With ``binning="equal_energy"`` (default) bin edges are spectral-mass
    quantiles, each bin contributes exactly 1/n of the truncated variance and
    its representative frequency is the in-bin energy centroid. With
    ``binning="equal_df"`` bins are uniform in frequency and amplitudes follow
    sqrt(2 S(f_i) df). ``n_components=1`` is the regular-wave convention:
    one component at the peak frequency with amplitude Hs/2.

    The default ``f_range`` is [0.2/Tp, 3/Tp] Hz which carries almost all of
    the spectral mass.
    """
    if n_components < 1:
        raise ConfigError("n_components must be >= 1")
    rng = np.random.default_rng(seed)
    meta = {
        "hs": params.hs,
        "tp": params.tp,
        "gamma": params.gamma,
        "seed": seed,
        "binning": binning,
    }

    if n_components == 1:
        # Regular (monochromatic) convention: amplitude Hs/2 at the peak.
        f = np.array([params.fp])
        amp = np.array([params.hs / 2.0])
        phase = rng.uniform(0.0, _TWO_PI, 1)
        omega = _TWO_PI * f
        return WaveComponentSet(
            amplitude=amp,
            omega=omega,
            wavenumber=dispersion_wavenumber(omega),
            direction=np.full(1, float(direction)),
            phase=phase,
            seed=seed,
            meta=meta | {"mode": "regular"},
        )

    if f_range is None:
        f_range = (0.2 / params.tp, 3.0 / params.tp)
    f_lo, f_hi = float(f_range[0]), float(f_range[1])
    if not (0.0 < f_lo < f_hi):
        raise ConfigError(f"invalid frequency range {f_range}")
    meta |= {"f_lo": f_lo, "f_hi": f_hi, "mode": "irregular"}

    if binning == "equal_df":
        edges = np.linspace(f_lo, f_hi, n_components + 1)
        f = 0.5 * (edges[:-1] + edges[1:])
        df = np.diff(edges)
        amp = np.sqrt(2.0 * jonswap_density(f, params) * df)
    elif binning == "equal_energy":
        grid = np.linspace(f_lo, f_hi, 8193)
        dens = jonswap_density(grid, params)
        cum = integrate.cumulative_trapezoid(dens, grid, initial=0.0)
        cum_f = integrate.cumulative_trapezoid(grid * dens, grid, initial=0.0)
        total = cum[-1]
        targets = np.linspace(0.0, total, n_components + 1)
        mass = total / n_components
        # Energy centroid of each equal-mass bin.
        cum_f_at_edges = np.interp(targets, cum, cum_f)
        f = np.diff(cum_f_at_edges) / mass
        amp = np.full(n_components, np.sqrt(2.0 * mass))
    else:
        raise ConfigError(f"unknown binning scheme {binning!r}")

    phase = rng.uniform(0.0, _TWO_PI, n_components)
    omega = _TWO_PI * f
    return WaveComponentSet(
        amplitude=amp,
        omega=omega,
        wavenumber=dispersion_wavenumber(omega),
        direction=np.full(n_components, float(direction)),
        phase=phase,
        seed=seed,
        meta=meta,
    )


# ---------------------------------------------------------------------------
# Directional spreading
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpreadingParams:
    """cos^(2s)((theta - theta0)/2) directional spreading.

    ``mean_direction`` is the mean propagation direction in radians and
    ``exponent`` (s) controls concentration; larger s narrows the spread.
    """

    mean_direction: float = 0.0
    exponent: float = 10.0

    def __post_init__(self):
        if not (self.exponent > 0.0):
            raise ConfigError(f"spreading exponent must be positive, got {self.exponent}")

    def density(self, theta):
        """Normalized spreading density over theta in (theta0 - pi, theta0 + pi]."""
        theta = np.asarray(theta, dtype=float)
        half = 0.5 * (theta - self.mean_direction)
        # Normalization: integral of cos^(2s)(x/2) over 2pi equals
        # 2 * B(s + 1/2, 1/2) via the w = sin(x/2) substitution.
        norm = 2.0 * special.beta(self.exponent + 0.5, 0.5)
        return np.cos(half) ** (2.0 * self.exponent) / norm

    def quantile(self, q):
        """Inverse CDF of the spreading density (vectorized)."""
        q = np.asarray(q, dtype=float)
        w = 2.0 * special.betaincinv(self.exponent + 0.5, self.exponent + 0.5, q) - 1.0
        return self.mean_direction + 2.0 * np.arcsin(w)

    def cdf(self, theta):
        """CDF of the spreading density starting at theta0 - pi."""
        theta = np.asarray(theta, dtype=float)
        w = np.sin(0.5 * (theta - self.mean_direction))
        return special.betainc(self.exponent + 0.5, self.exponent + 0.5, (w + 1.0) / 2.0)


def apply_directional_spreading(
    wave: WaveComponentSet,
    spreading: SpreadingParams,
    n_directions: int = 12,
    seed: int = 0,
    method: str = "deterministic",
) -> WaveComponentSet:
    """Split every frequency component across propagation directions.

    Each component's energy is divided equally over ``n_directions``
    sub-components (amplitude / sqrt(n)), so total variance is preserved
    exactly. Directions are either the equal-probability-mass centroids of the
    spreading density (``method="deterministic"``, the default) or random
    draws from it (``method="random"``). Every sub-component receives a fresh
    independent phase; coherent phases would distort the variance at the
    origin.
    """
    if n_directions < 1:
        raise ConfigError("n_directions must be >= 1")
    if method not in ("deterministic", "random"):
        raise ConfigError(f"unknown spreading method {method!r}")
    rng = np.random.default_rng(seed)
    n_f = len(wave)

    if method == "deterministic":
        q_mid = (np.arange(n_directions) + 0.5) / n_directions
        dirs = spreading.quantile(q_mid)
        direction = np.tile(dirs, n_f)
    else:
        direction = spreading.quantile(rng.uniform(0.0, 1.0, n_f * n_directions))

    amp = np.repeat(wave.amplitude / np.sqrt(n_directions), n_directions)
    omega = np.repeat(wave.omega, n_directions)
    phase = rng.uniform(0.0, _TWO_PI, n_f * n_directions)
    meta = dict(wave.meta) | {
        "spread_s": spreading.exponent,
        "mean_direction": spreading.mean_direction,
        "n_directions": n_directions,
        "spread_method": method,
        "spread_seed": seed,
    }
    return WaveComponentSet(
        amplitude=amp,
        omega=omega,
        wavenumber=dispersion_wavenumber(omega),
        direction=direction,
        phase=phase,
        seed=wave.seed,
        meta=meta,
    )


def make_wave_set(
    tp: float,
    hs: float,
    mode: str = "irregular",
    angle_deg: float = 0.0,
    seed: int = 0,
    n_components: int = 64,
    gamma: float = 3.3,
    spread_s: float = 10.0,
    n_directions: int = 12,
) -> WaveComponentSet:
    """Build the component set for one sea-state cell.

    ``mode`` is one of ``regular`` (single component, amplitude Hs/2),
    ``irregular`` (long-crested JONSWAP sea) or ``spread`` (JONSWAP sea with
    cos^(2s) directional spreading about the mean direction). ``angle_deg``
    is the mean propagation direction measured from +x.
    """
    params = SpectrumParams(hs=hs, tp=tp, gamma=gamma)
    angle = np.deg2rad(angle_deg)
    if mode == "regular":
        return discretize_spectrum(params, 1, seed=seed, direction=angle)
    if mode == "irregular":
        return discretize_spectrum(params, n_components, seed=seed, direction=angle)
    if mode == "spread":
        base = discretize_spectrum(params, n_components, seed=seed)
        spreading = SpreadingParams(mean_direction=angle, exponent=spread_s)
        return apply_directional_spreading(
            base, spreading, n_directions=n_directions, seed=seed + 1
        )
    raise ConfigError(f"unknown wave mode {mode!r}")


# ---------------------------------------------------------------------------
# Field evaluation
# ---------------------------------------------------------------------------


def elevation_at(wave: WaveComponentSet, x: float, y: float, t):
    """Free-surface elevation at a point for scalar or array times."""
    from . import kernels

    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    eta, _, _, _ = kernels.wave_fields(
        wave.amplitude,
        wave.omega,
        wave.wavenumber,
        np.cos(wave.direction),
        np.sin(wave.direction),
        wave.phase,
        float(x),
        float(y),
        t_arr,
    )
    return float(eta[0]) if np.isscalar(t) or np.ndim(t) == 0 else eta


def wave_fields_at(wave: WaveComponentSet, x: float, y: float, t):
    """Elevation, its time rate, and the two surface slopes at a point.

    Returns four arrays aligned with ``t``: eta, d(eta)/dt, d(eta)/dx,
    d(eta)/dy.
    """
    from . import kernels

    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    return kernels.wave_fields(
        wave.amplitude,
        wave.omega,
        wave.wavenumber,
        np.cos(wave.direction),
        np.sin(wave.direction),
        wave.phase,
        float(x),
        float(y),
        t_arr,
    )


def synthesize_trace(wave: WaveComponentSet, duration: float, dt: float, x=0.0, y=0.0):
    """Sample the elevation at a fixed point on a uniform time grid.

    Returns (t, eta) arrays covering [0, duration) with spacing dt.
    """
    if dt <= 0.0 or duration <= 0.0:
        raise ConfigError("duration and dt must be positive")
    n = int(round(duration / dt))
    t = np.arange(n) * dt
    return t, elevation_at(wave, x, y, t)


# ---------------------------------------------------------------------------
# Export / import
# ---------------------------------------------------------------------------


def write_trace_csv(path, t, eta):
    """Write a `t,eta` trace CSV."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,eta\n")
        for ti, ei in zip(t, eta):
            fh.write(f"{float(ti)!r},{float(ei)!r}\n")


def read_trace_csv(path):
    data = np.genfromtxt(path, delimiter=",", names=True)
    return data["t"], data["eta"]


def write_components_csv(path, wave: WaveComponentSet):
    """Export components as CSV plus a JSON metadata sidecar.

    The sidecar path is ``<path>.meta.json`` and records hs, tp, gamma,
    spreading and seed information needed to reproduce the set.
    """
    path = str(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("amp,omega,k,theta,phi\n")
        for i in range(len(wave)):
            row = (
                wave.amplitude[i],
                wave.omega[i],
                wave.wavenumber[i],
                wave.direction[i],
                wave.phase[i],
            )
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
    sidecar = {"seed": wave.seed, **wave.meta}
    with open(path + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_components_csv(path):
    """Load a component set written by :func:`write_components_csv`."""
    path = str(path)
    data = np.genfromtxt(path, delimiter=",", names=True)
    data = np.atleast_1d(data)
    try:
        with open(path + ".meta.json", encoding="utf-8") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        meta = {"seed": 0}
    seed = int(meta.pop("seed", 0))
    return WaveComponentSet(
        amplitude=data["amp"],
        omega=data["omega"],
        wavenumber=data["k"],
        direction=data["theta"],
        phase=data["phi"],
        seed=seed,
        meta=meta,
    )
