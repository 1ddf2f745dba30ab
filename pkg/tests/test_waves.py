"""Wave synthesis tests: spectral shape, discretization, spreading, queries."""

import json
import math

import numpy as np
import pytest
from scipy import integrate

import wecdesk.waves as waves
from wecdesk.errors import ConfigError

HS, TP = 2.0, 10.0


def spectrum():
    return waves.SpectrumParams(hs=HS, tp=TP)


# ---------------------------------------------------------------------------
# jonswap_density
# ---------------------------------------------------------------------------


def test_density_vanishes_toward_zero_frequency():
    p = spectrum()
    assert waves.jonswap_density(p.fp / 50.0, p) < 1e-12


def test_density_argmax_sits_at_peak_frequency():
    # independent oracle: brute argmax on a 1e4-point grid
    p = spectrum()
    grid = np.linspace(0.2 * p.fp, 5.0 * p.fp, 10_000)
    dens = np.array([waves.jonswap_density(f, p) for f in grid])
    f_star = grid[np.argmax(dens)]
    df = grid[1] - grid[0]
    assert abs(f_star - p.fp) <= df


def test_density_integrates_to_variance():
    # trapezoid quadrature oracle; m0 = (Hs/4)^2 = 0.25 for Hs = 2
    p = spectrum()
    grid = np.linspace(0.3 * p.fp, 6.0 * p.fp, 100_000)
    dens = np.array([waves.jonswap_density(f, p) for f in grid])
    m0 = np.trapezoid(dens, grid)
    assert abs(m0 - 0.25) / 0.25 < 0.02


def test_density_rejects_nonpositive_frequency():
    p = spectrum()
    with pytest.raises(ConfigError):
        waves.jonswap_density(0.0, p)
    with pytest.raises(ConfigError):
        waves.jonswap_density(-0.1, p)


def test_spectrum_params_validation():
    with pytest.raises(ConfigError):
        waves.SpectrumParams(hs=-1.0, tp=TP)
    with pytest.raises(ConfigError):
        waves.SpectrumParams(hs=HS, tp=0.0)
    with pytest.raises(ConfigError):
        waves.SpectrumParams(hs=HS, tp=TP, gamma=0.5)


# ---------------------------------------------------------------------------
# discretize_spectrum
# ---------------------------------------------------------------------------


def test_single_component_regular_convention():
    ws = waves.discretize_spectrum(spectrum(), n_components=1, seed=0)
    assert ws.amplitude.shape == (1,)
    assert ws.amplitude[0] == pytest.approx(HS / 2.0, abs=0.0)
    assert ws.omega[0] == pytest.approx(2.0 * math.pi / TP, rel=1e-12)


def test_component_energy_matches_m0():
    ws = waves.discretize_spectrum(spectrum(), n_components=64, seed=1)
    assert ws.variance == pytest.approx(0.25, rel=0.02)


def test_long_trace_variance_monte_carlo():
    # 1e5 samples of the synthesized signal recover the spectral variance
    ws = waves.discretize_spectrum(spectrum(), n_components=64, seed=3)
    t = np.arange(100_000) * 0.2
    eta = waves.elevation_at(ws, 0.0, 0.0, t)
    assert np.var(eta) == pytest.approx(0.25, rel=0.05)


def test_same_seed_is_bitwise_identical():
    a = waves.discretize_spectrum(spectrum(), n_components=32, seed=42)
    b = waves.discretize_spectrum(spectrum(), n_components=32, seed=42)
    for name in ("amplitude", "omega", "wavenumber", "direction", "phase"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    c = waves.discretize_spectrum(spectrum(), n_components=32, seed=43)
    assert not np.array_equal(a.phase, c.phase)


def test_bad_frequency_range_rejected():
    with pytest.raises(ConfigError):
        waves.discretize_spectrum(spectrum(), n_components=8, f_range=(0.2, 0.1), seed=0)
    with pytest.raises(ConfigError):
        waves.discretize_spectrum(spectrum(), n_components=0, seed=0)


def test_dispersion_relation_everywhere():
    ws = waves.make_wave_set(tp=TP, hs=HS, mode="spread", angle_deg=20.0, seed=5)
    rel = np.abs(ws.omega**2 - waves.GRAVITY * ws.wavenumber) / ws.omega**2
    assert rel.max() < 1e-12


# ---------------------------------------------------------------------------
# directional spreading
# ---------------------------------------------------------------------------


def _spreading_cdf_oracle(theta, theta0, s):
    """Numeric CDF of the cos^{2s}((t - theta0)/2) density via quadrature."""
    norm, _ = integrate.quad(
        lambda t: math.cos((t - theta0) / 2.0) ** (2 * s),
        theta0 - math.pi,
        theta0 + math.pi,
        limit=400,
    )
    val, _ = integrate.quad(
        lambda t: math.cos((t - theta0) / 2.0) ** (2 * s),
        theta0 - math.pi,
        theta,
        limit=400,
    )
    return val / norm


def test_large_exponent_degenerates_to_unidirectional():
    base = waves.discretize_spectrum(spectrum(), n_components=16, seed=0)
    sp = waves.apply_directional_spreading(
        base, waves.SpreadingParams(mean_direction=0.3, exponent=1e6), n_directions=8, seed=1
    )
    assert np.max(np.abs(sp.direction - 0.3)) < 1e-2


def test_spreading_preserves_total_energy():
    base = waves.discretize_spectrum(spectrum(), n_components=32, seed=2)
    sp = waves.apply_directional_spreading(
        base, waves.SpreadingParams(mean_direction=-0.4, exponent=10.0), n_directions=12, seed=3
    )
    assert sp.variance == pytest.approx(base.variance, rel=1e-9)


def test_deterministic_bins_are_equal_mass_quantiles():
    # quadrature oracle: CDF at each deterministic direction must sit at the
    # centre of its 1/n probability slot
    s, theta0, n = 10.0, 0.25, 12
    base = waves.discretize_spectrum(spectrum(), n_components=2, seed=4)
    sp = waves.apply_directional_spreading(
        base, waves.SpreadingParams(mean_direction=theta0, exponent=s), n_directions=n, seed=0
    )
    dirs = np.sort(np.unique(np.round(sp.direction, 12)))
    assert dirs.size == n
    for i, th in enumerate(dirs):
        mass = _spreading_cdf_oracle(th, theta0, s)
        assert mass == pytest.approx((i + 0.5) / n, abs=1e-6)


def test_random_directions_match_density_chi_square():
    # goodness of fit of 1e4 sampled directions against the analytic density,
    # binned into 20 equal-mass cells found by quadrature inversion
    from scipy import optimize, stats

    s, theta0 = 10.0, 0.0
    base = waves.discretize_spectrum(spectrum(), n_components=100, seed=6)
    sp = waves.apply_directional_spreading(
        base,
        waves.SpreadingParams(mean_direction=theta0, exponent=s),
        n_directions=100,
        seed=7,
        method="random",
    )
    dirs = np.asarray(sp.direction)
    assert dirs.size == 10_000
    n_bins = 20
    edges = [-math.pi + theta0]
    for q in np.arange(1, n_bins) / n_bins:
        edge = optimize.brentq(
            lambda th: _spreading_cdf_oracle(th, theta0, s) - q,
            theta0 - math.pi + 1e-9,
            theta0 + math.pi - 1e-9,
        )
        edges.append(edge)
    edges.append(math.pi + theta0)
    counts, _ = np.histogram(dirs, bins=np.array(edges))
    expected = dirs.size / n_bins
    chi2 = np.sum((counts - expected) ** 2 / expected)
    p = stats.chi2.sf(chi2, n_bins - 1)
    assert p > 0.01


# ---------------------------------------------------------------------------
# elevation queries
# ---------------------------------------------------------------------------


def test_elevation_single_component_at_origin():
    ws = waves.discretize_spectrum(spectrum(), n_components=1, seed=0)
    ws = waves.WaveComponentSet(
        amplitude=ws.amplitude,
        omega=ws.omega,
        wavenumber=ws.wavenumber,
        direction=ws.direction,
        phase=np.zeros(1),
        seed=0,
    )
    assert waves.elevation_at(ws, 0.0, 0.0, 0.0) == pytest.approx(HS / 2.0, abs=1e-15)


def test_elevation_periodicity():
    ws = waves.discretize_spectrum(spectrum(), n_components=1, seed=9)
    period = 2.0 * math.pi / ws.omega[0]
    e0 = waves.elevation_at(ws, 3.0, -4.0, 1.0)
    e1 = waves.elevation_at(ws, 3.0, -4.0, 1.0 + period)
    assert abs(e1 - e0) < 1e-12


def test_elevation_superposition_is_linear():
    ws = waves.discretize_spectrum(spectrum(), n_components=2, seed=11)
    one = waves.WaveComponentSet(
        amplitude=ws.amplitude[:1],
        omega=ws.omega[:1],
        wavenumber=ws.wavenumber[:1],
        direction=ws.direction[:1],
        phase=ws.phase[:1],
        seed=0,
    )
    two = waves.WaveComponentSet(
        amplitude=ws.amplitude[1:],
        omega=ws.omega[1:],
        wavenumber=ws.wavenumber[1:],
        direction=ws.direction[1:],
        phase=ws.phase[1:],
        seed=0,
    )
    t = np.linspace(0.0, 30.0, 7)
    full = waves.elevation_at(ws, 1.0, 2.0, t)
    split = waves.elevation_at(one, 1.0, 2.0, t) + waves.elevation_at(two, 1.0, 2.0, t)
    np.testing.assert_allclose(full, split, rtol=0.0, atol=1e-12)


def test_elevation_rate_matches_finite_difference():
    ws = waves.make_wave_set(tp=TP, hs=HS, mode="irregular", seed=13)
    t = np.array([12.3])
    h = 1e-6
    eta_p = waves.elevation_at(ws, 2.0, 1.0, t + h)[0]
    eta_m = waves.elevation_at(ws, 2.0, 1.0, t - h)[0]
    _, rate, _, _ = waves.wave_fields_at(ws, 2.0, 1.0, t)
    assert rate[0] == pytest.approx((eta_p - eta_m) / (2 * h), abs=1e-6)


def test_slope_fields_match_spatial_finite_difference():
    ws = waves.make_wave_set(tp=TP, hs=HS, mode="spread", angle_deg=35.0, seed=14)
    t = np.array([7.7])
    h = 1e-6
    _, _, sx, sy = waves.wave_fields_at(ws, -3.0, 5.0, t)
    ex = (
        waves.elevation_at(ws, -3.0 + h, 5.0, t)[0]
        - waves.elevation_at(ws, -3.0 - h, 5.0, t)[0]
    ) / (2 * h)
    ey = (
        waves.elevation_at(ws, -3.0, 5.0 + h, t)[0]
        - waves.elevation_at(ws, -3.0, 5.0 - h, t)[0]
    ) / (2 * h)
    assert sx[0] == pytest.approx(ex, abs=1e-6)
    assert sy[0] == pytest.approx(ey, abs=1e-6)


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------


def test_trace_csv_roundtrip(tmp_path):
    ws = waves.make_wave_set(tp=TP, hs=HS, mode="irregular", seed=17)
    t, eta = waves.synthesize_trace(ws, duration=20.0, dt=0.25)
    path = tmp_path / "trace.csv"
    waves.write_trace_csv(path, t, eta)
    t2, eta2 = waves.read_trace_csv(path)
    assert np.array_equal(t, t2)
    assert np.array_equal(eta, eta2)


def test_component_csv_roundtrip_with_sidecar(tmp_path):
    ws = waves.make_wave_set(tp=TP, hs=HS, mode="spread", angle_deg=10.0, seed=19)
    path = tmp_path / "components.csv"
    waves.write_components_csv(path, ws)
    back = waves.read_components_csv(path)
    for name in ("amplitude", "omega", "wavenumber", "direction", "phase"):
        assert np.array_equal(getattr(ws, name), getattr(back, name))
    meta = json.loads((tmp_path / "components.csv.meta.json").read_text())
    assert meta["tp"] == TP and meta["hs"] == HS
