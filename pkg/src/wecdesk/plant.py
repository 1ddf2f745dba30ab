"""Three-tether buoy surrogate: linear 6-DOF rigid-body dynamics.

The buoy is a single rigid body with pose q = (x, y, z, roll, pitch, yaw) and
generalized velocity v = dq/dt. Hydrodynamics are collapsed into constant
matrices: mass (including added mass), hydrostatic stiffness and linear
damping. Wave forcing enters as a wrench that is linear in the free-surface
elevation and the two surface slopes at the buoy's horizontal position. Three
tethers connect body attachment points to seabed anchors; each carries a
power-take-off acting along the leg.

Sign conventions
----------------
``leg_forces`` passed to :func:`plant_step` are forces applied to the body
along each leg's extension coordinate (positive pushes the attachment away
from its anchor). The generator-side braking force is the negative of that;
:func:`instantaneous_power` takes generator-side forces so that positive
power means energy extracted from the motion.

Integration is semi-implicit Euler at a fixed physics step (default 0.05 s).
:func:`mechanical_energy` returns the discrete energy consistent with that
integrator, for which the work-energy balance holds to rounding error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import ConfigError, IntegrationDivergedError, SingularGeometryError

PHYSICS_DT = 0.05  # s, default physics step

# Which wave signal drives each DOF: 0 = elevation, 1 = x-slope, 2 = y-slope.
# Surge and pitch follow the x-slope, sway/roll/yaw the y-slope, heave the
# elevation. A nonzero yaw gain models hull asymmetry: head-on (0 deg) waves
# have zero y-slope and excite no yaw, angled wavefronts do.
EXCITATION_PAIRING = (1, 2, 0, 2, 1, 2)

_NAMED_PARAM_FILES = {
    "desk6dof-v1": "desk6dof-v1.params",
    "heave1dof-v1": "heave1dof-v1.params",
}


# ---------------------------------------------------------------------------
# Parameters and state
# ---------------------------------------------------------------------------


@dataclass
class PlantParams:
    """Plant coefficient bundle.

    Attributes
    ----------
    mass_matrix : (6, 6) array
        Generalized mass including added mass. Symmetric positive definite.
    hydrostatic_stiffness : (6, 6) array
        Restoring stiffness about the rest pose.
    linear_damping : (6, 6) array
        Radiation/viscous damping. Positive semidefinite.
    anchor_positions : (3, 3) array
        Seabed anchor of each leg, world frame, one row per leg.
    attachment_points : (3, 3) array
        Leg attachment on the buoy, body frame, one row per leg.
    excitation_gain : (6,) array
        Per-DOF gain applied to the paired wave signal (see
        ``EXCITATION_PAIRING``).
    force_limit : float
        Symmetric clamp on per-leg PTO force in newtons.
    locked_dofs : (6,) bool array
        DOFs held frozen (used by reduced test rigs). Default all free.
    """

    name: str
    mass_matrix: np.ndarray
    hydrostatic_stiffness: np.ndarray
    linear_damping: np.ndarray
    anchor_positions: np.ndarray
    attachment_points: np.ndarray
    excitation_gain: np.ndarray
    force_limit: float = 1.0e6
    locked_dofs: np.ndarray = field(default_factory=lambda: np.zeros(6, dtype=bool))

    def __post_init__(self):
        self.mass_matrix = np.asarray(self.mass_matrix, dtype=float).reshape(6, 6)
        self.hydrostatic_stiffness = np.asarray(
            self.hydrostatic_stiffness, dtype=float
        ).reshape(6, 6)
        self.linear_damping = np.asarray(self.linear_damping, dtype=float).reshape(6, 6)
        self.anchor_positions = np.asarray(self.anchor_positions, dtype=float).reshape(3, 3)
        self.attachment_points = np.asarray(self.attachment_points, dtype=float).reshape(3, 3)
        self.excitation_gain = np.asarray(self.excitation_gain, dtype=float).reshape(6)
        self.locked_dofs = np.asarray(self.locked_dofs, dtype=bool).reshape(6)
        self.force_limit = float(self.force_limit)
        self._validate()
        self.inverse_mass = np.linalg.inv(self.mass_matrix)
        self.rest_lengths = np.linalg.norm(
            self.attachment_points - self.anchor_positions, axis=1
        )
        if np.any(self.rest_lengths < 1e-9):
            raise ConfigError("attachment coincides with its anchor at rest")

    def _validate(self):
        m = self.mass_matrix
        if not np.allclose(m, m.T, rtol=0.0, atol=1e-6 * np.abs(m).max()):
            raise ConfigError("mass matrix must be symmetric")
        try:
            np.linalg.cholesky(m)
        except np.linalg.LinAlgError:
            raise ConfigError("mass matrix must be positive definite") from None
        c = self.linear_damping
        eigs = np.linalg.eigvalsh(0.5 * (c + c.T))
        if eigs.min() < -1e-9 * max(1.0, abs(eigs).max()):
            raise ConfigError("damping matrix must be positive semidefinite")
        if self.force_limit <= 0.0:
            raise ConfigError("force limit must be positive")
        a = self.anchor_positions
        span = np.cross(a[1] - a[0], a[2] - a[0])
        if np.linalg.norm(span) < 1e-9:
            raise ConfigError("anchors are collinear; legs do not span a triangle")
        b = self.attachment_points
        for i in range(3):
            for j in range(i + 1, 3):
                if np.linalg.norm(b[i] - b[j]) < 1e-9:
                    raise ConfigError("attachment points must be distinct")


@dataclass
class PlantState:
    """Pose, velocity, last acceleration and simulation time."""

    pose: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    time: float

    @classmethod
    def rest(cls) -> "PlantState":
        return cls(np.zeros(6), np.zeros(6), np.zeros(6), 0.0)


@dataclass
class PtoState:
    """Per-leg extension (m) and extension rate (m/s)."""

    extension: np.ndarray
    velocity: np.ndarray


@dataclass
class EnergyLedger:
    """Cumulative work bookkeeping across plant steps.

    ``pto`` is energy extracted by the generators (positive when absorbing),
    ``damp`` energy dissipated in linear damping, ``exc`` work done by the
    wave excitation on the body.
    """

    exc: float = 0.0
    damp: float = 0.0
    pto: float = 0.0
    pto_per_leg: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def add(self, d_exc, d_damp, d_pto_legs):
        self.exc += d_exc
        self.damp += d_damp
        self.pto_per_leg = self.pto_per_leg + d_pto_legs
        self.pto += float(np.sum(d_pto_legs))


# ---------------------------------------------------------------------------
# Kinematics
# ---------------------------------------------------------------------------


def rotation_matrix(angles):
    """Body-to-world rotation, yaw about z after pitch about y after roll about x."""
    cr, sr = math.cos(angles[0]), math.sin(angles[0])
    cp, sp = math.cos(angles[1]), math.sin(angles[1])
    cy, sy = math.cos(angles[2]), math.sin(angles[2])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    return rz @ ry @ rx


def _rotation_partials(angles):
    cr, sr = math.cos(angles[0]), math.sin(angles[0])
    cp, sp = math.cos(angles[1]), math.sin(angles[1])
    cy, sy = math.cos(angles[2]), math.sin(angles[2])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    drx = np.array([[0.0, 0.0, 0.0], [0.0, -sr, -cr], [0.0, cr, -sr]])
    dry = np.array([[-sp, 0.0, cp], [0.0, 0.0, 0.0], [-cp, 0.0, -sp]])
    drz = np.array([[-sy, -cy, 0.0], [cy, -sy, 0.0], [0.0, 0.0, 0.0]])
    return rz @ ry @ drx, rz @ dry @ rx, drz @ ry @ rx


def _leg_geometry(pose, anchors, attach_body, rest_lengths):
    """Extensions and the 3x6 Jacobian d(extension)/d(pose)."""
    p = pose[:3]
    r = rotation_matrix(pose[3:])
    partials = _rotation_partials(pose[3:])
    ext = np.empty(3)
    jac = np.empty((3, 6))
    for i in range(3):
        rho = attach_body[i]
        world = p + r @ rho
        d = world - anchors[i]
        length = math.sqrt(d @ d)
        if length < 1e-9:
            raise SingularGeometryError(f"leg {i} collapsed onto its anchor")
        u = d / length
        ext[i] = length - rest_lengths[i]
        jac[i, :3] = u
        for a in range(3):
            jac[i, 3 + a] = u @ (partials[a] @ rho)
    return ext, jac


def leg_kinematics(state: PlantState, params: PlantParams) -> PtoState:
    """Exact leg extensions and extension rates for the current state."""
    ext, jac = _leg_geometry(
        state.pose, params.anchor_positions, params.attachment_points, params.rest_lengths
    )
    return PtoState(extension=ext, velocity=jac @ state.velocity)


def instantaneous_power(generator_forces, pto: PtoState) -> float:
    """Mean over the three PTOs of generator force times extension rate.

    Positive means the machine is generating. ``generator_forces`` are
    braking-side forces, the negative of the leg forces applied to the body.
    """
    return float(np.mean(np.asarray(generator_forces, dtype=float) * pto.velocity))


# ---------------------------------------------------------------------------
# Excitation
# ---------------------------------------------------------------------------


def excitation_wrench(wave, state: PlantState, t: float, params: PlantParams):
    """Wave-induced 6-DOF wrench at time t for the current buoy position.

    Linear in (elevation, x-slope, y-slope) sampled at the buoy's horizontal
    position; each DOF takes its paired signal scaled by the per-DOF gain.
    ``wave=None`` means calm water (zero wrench).
    """
    if wave is None:
        return np.zeros(6)
    from .waves import wave_fields_at

    eta, _, sx, sy = wave_fields_at(wave, state.pose[0], state.pose[1], t)
    signals = (eta[0], sx[0], sy[0])
    return params.excitation_gain * np.array([signals[j] for j in EXCITATION_PAIRING])


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------


def _wave_arrays(wave):
    if wave is None:
        z = np.zeros(1)
        return z, np.ones(1), np.zeros(1), np.ones(1), np.zeros(1), z
    return (
        wave.amplitude,
        wave.omega,
        wave.wavenumber,
        np.cos(wave.direction),
        np.sin(wave.direction),
        wave.phase,
    )


def _excitation_signals(wamp, womega, wk, wcos, wsin, wphi, x, y, t):
    arg = womega * t - wk * (x * wcos + y * wsin) + wphi
    s = np.sin(arg)
    eta = float(np.dot(wamp, np.cos(arg)))
    sx = float(np.dot(wamp * wk * wcos, s))
    sy = float(np.dot(wamp * wk * wsin, s))
    return eta, sx, sy


def _step_arrays(
    q,
    v,
    t,
    dt,
    inverse_mass,
    stiffness,
    damping,
    gain,
    anchors,
    attach,
    rest,
    locked,
    force_limit,
    wave_arrs,
    leg_forces,
):
    """One semi-implicit Euler substep on raw arrays.

    Returns (q2, v2, a, d_exc, d_damp, d_pto_legs). Work increments use the
    midpoint velocity so the discrete work-energy identity is exact.
    """
    ext, jac = _leg_geometry(q, anchors, attach, rest)
    f = np.clip(leg_forces, -force_limit, force_limit)
    eta, sx, sy = _excitation_signals(*wave_arrs, q[0], q[1], t)
    signals = (eta, sx, sy)
    wrench = gain * np.array([signals[j] for j in EXCITATION_PAIRING])

    damp_force = damping @ v
    total = -stiffness @ q - damp_force + wrench + jac.T @ f
    a = inverse_mass @ total
    a[locked] = 0.0
    v2 = v + dt * a
    v2[locked] = 0.0
    q2 = q + dt * v2

    v_mid = 0.5 * (v + v2)
    d_exc = dt * float(wrench @ v_mid)
    d_damp = dt * float(damp_force @ v_mid)
    ext_rate_mid = jac @ v_mid
    d_pto_legs = -dt * f * ext_rate_mid  # extracted by each generator
    return q2, v2, a, d_exc, d_damp, d_pto_legs


def plant_step(
    state: PlantState,
    leg_forces,
    wave,
    params: PlantParams,
    dt: float = PHYSICS_DT,
    ledger: EnergyLedger | None = None,
    method: str = "semi_implicit",
) -> PlantState:
    """Advance the plant by one physics step.

    ``leg_forces`` is the 3-vector of PTO forces applied to the body along
    the leg extension coordinates; it is clamped to the plant force limit.
    ``method="rk4"`` switches to a classical Runge-Kutta step for convergence
    studies (its energy bookkeeping is quadrature, not exact).
    """
    if dt <= 0.0:
        raise ConfigError("dt must be positive")
    leg_forces = np.asarray(leg_forces, dtype=float).reshape(3)
    wave_arrs = _wave_arrays(wave)

    # overflow on the way to the non-finite check below is expected, not noise
    np_err = np.seterr(over="ignore", invalid="ignore")
    try:
        q2, v2, a, d_exc, d_damp, d_pto = _dispatch_step(
            state, leg_forces, params, wave_arrs, dt, method
        )
    finally:
        np.seterr(**np_err)

    if not (np.all(np.isfinite(q2)) and np.all(np.isfinite(v2))):
        raise IntegrationDivergedError(
            f"plant state non-finite at t={state.time + dt:.3f}",
            last_valid_time=state.time,
        )
    if ledger is not None:
        ledger.add(d_exc, d_damp, d_pto)
    return PlantState(pose=q2, velocity=v2, acceleration=a, time=state.time + dt)


def _dispatch_step(state, leg_forces, params, wave_arrs, dt, method):
    if method == "semi_implicit":
        return _step_arrays(
            state.pose,
            state.velocity,
            state.time,
            dt,
            params.inverse_mass,
            params.hydrostatic_stiffness,
            params.linear_damping,
            params.excitation_gain,
            params.anchor_positions,
            params.attachment_points,
            params.rest_lengths,
            params.locked_dofs,
            params.force_limit,
            wave_arrs,
            leg_forces,
        )
    elif method == "rk4":
        return _rk4_arrays(state, leg_forces, params, wave_arrs, dt)
    else:
        raise ConfigError(f"unknown integration method {method!r}")


def _rk4_arrays(state, leg_forces, params, wave_arrs, dt):
    f = np.clip(leg_forces, -params.force_limit, params.force_limit)
    locked = params.locked_dofs

    def deriv(q, v, t):
        ext, jac = _leg_geometry(
            q, params.anchor_positions, params.attachment_points, params.rest_lengths
        )
        eta, sx, sy = _excitation_signals(*wave_arrs, q[0], q[1], t)
        signals = (eta, sx, sy)
        wrench = params.excitation_gain * np.array(
            [signals[j] for j in EXCITATION_PAIRING]
        )
        a = params.inverse_mass @ (
            -params.hydrostatic_stiffness @ q - params.linear_damping @ v + wrench + jac.T @ f
        )
        a[locked] = 0.0
        return a, wrench, jac

    q, v, t = state.pose, state.velocity, state.time
    a1, w1, j1 = deriv(q, v, t)
    k1q, k1v = v, a1
    a2, _, _ = deriv(q + 0.5 * dt * k1q, v + 0.5 * dt * k1v, t + 0.5 * dt)
    k2q, k2v = v + 0.5 * dt * k1v, a2
    a3, _, _ = deriv(q + 0.5 * dt * k2q, v + 0.5 * dt * k2v, t + 0.5 * dt)
    k3q, k3v = v + 0.5 * dt * k2v, a3
    a4, w4, j4 = deriv(q + dt * k3q, v + dt * k3v, t + dt)
    k4q, k4v = v + dt * k3v, a4
    q2 = q + dt / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q)
    v2 = v + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    v2[locked] = 0.0
    # Trapezoid bookkeeping on endpoint quantities (approximate for rk4).
    v_mid = 0.5 * (v + v2)
    d_exc = dt * float((0.5 * (w1 + w4)) @ v_mid)
    d_damp = dt * float((params.linear_damping @ v_mid) @ v_mid)
    jac_mid = 0.5 * (j1 + j4)
    d_pto = -dt * f * (jac_mid @ v_mid)
    return q2, v2, a1, d_exc, d_damp, d_pto


def mechanical_energy(state: PlantState, params: PlantParams, dt: float = PHYSICS_DT) -> float:
    """Discrete mechanical energy consistent with the semi-implicit update.

    E = v'Mv/2 + q'Kq/2 - (dt/2) v'Kq. The correction term makes the balance
    Delta E = W_exc - W_damp - W_pto exact for the integrator, instead of
    oscillating at O(dt * omega).
    """
    q, v = state.pose, state.velocity
    k = params.hydrostatic_stiffness
    return float(
        0.5 * v @ params.mass_matrix @ v
        + 0.5 * q @ k @ q
        - 0.5 * dt * v @ k @ q
    )


# ---------------------------------------------------------------------------
# Parameter files
# ---------------------------------------------------------------------------


def _format_array(a):
    return " ".join(repr(float(x)) for x in np.asarray(a, dtype=float).ravel())


def save_plant_params(path, params: PlantParams):
    """Write a plant parameter file.

    Schema: one ``[plant]`` section; matrix and vector keys hold row-major
    whitespace-separated floats (mass_matrix, hydrostatic_stiffness,
    linear_damping: 36 values; anchor_positions, attachment_points: 9;
    excitation_gain: 6; locked_dofs: 6 zeros/ones), plus ``name`` and
    ``force_limit``.
    """
    lines = [
        "[plant]",
        f"name = {params.name}",
        f"force_limit = {params.force_limit!r}",
        f"mass_matrix = {_format_array(params.mass_matrix)}",
        f"hydrostatic_stiffness = {_format_array(params.hydrostatic_stiffness)}",
        f"linear_damping = {_format_array(params.linear_damping)}",
        f"anchor_positions = {_format_array(params.anchor_positions)}",
        f"attachment_points = {_format_array(params.attachment_points)}",
        f"excitation_gain = {_format_array(params.excitation_gain)}",
        f"locked_dofs = {' '.join(str(int(x)) for x in params.locked_dofs)}",
        "",
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))


def _parse_plant_text(text, source):
    import configparser

    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse plant file {source}: {exc}") from exc
    if "plant" not in cp:
        raise ConfigError(f"plant file {source} lacks a [plant] section")
    sec = cp["plant"]

    def grab(key, count):
        if key not in sec:
            raise ConfigError(f"plant file {source} missing key {key!r}")
        vals = sec[key].split()
        if len(vals) != count:
            raise ConfigError(
                f"plant file {source}: key {key!r} needs {count} values, got {len(vals)}"
            )
        return np.array([float(x) for x in vals])

    try:
        return PlantParams(
            name=sec.get("name", "unnamed"),
            mass_matrix=grab("mass_matrix", 36).reshape(6, 6),
            hydrostatic_stiffness=grab("hydrostatic_stiffness", 36).reshape(6, 6),
            linear_damping=grab("linear_damping", 36).reshape(6, 6),
            anchor_positions=grab("anchor_positions", 9).reshape(3, 3),
            attachment_points=grab("attachment_points", 9).reshape(3, 3),
            excitation_gain=grab("excitation_gain", 6),
            force_limit=float(sec.get("force_limit", "1e6")),
            locked_dofs=grab("locked_dofs", 6).astype(bool)
            if "locked_dofs" in sec
            else np.zeros(6, dtype=bool),
        )
    except ValueError as exc:
        raise ConfigError(f"plant file {source}: {exc}") from exc


def load_plant_params(name_or_path) -> PlantParams:
    """Load plant parameters by shipped name or from a file path."""
    key = str(name_or_path)
    if key in _NAMED_PARAM_FILES:
        text = (
            resources.files("wecdesk.data").joinpath(_NAMED_PARAM_FILES[key]).read_text()
        )
        return _parse_plant_text(text, key)
    try:
        with open(key, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read plant file {key}: {exc}") from exc
    return _parse_plant_text(text, key)
