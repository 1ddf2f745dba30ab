"""Pure-Python kernel backend.

Reuses the readable array-level stepping math in :mod:`wecdesk.plant` so the
fallback and the reference implementation cannot drift apart. The compiled
backend re-implements the same loops in C; an equivalence test pins the two
together.
"""

import numpy as np

from .. import plant as _plant


def wave_fields(amp, omega, k, costh, sinth, phi, x, y, t):
    """Superpose components at point (x, y) over an array of times.

    Returns (eta, deta_dt, deta_dx, deta_dy), each aligned with ``t``.
    """
    t = np.asarray(t, dtype=float)
    spatial = k * (x * costh + y * sinth)
    arg = omega[None, :] * t[:, None] - spatial[None, :] + phi[None, :]
    c = np.cos(arg)
    s = np.sin(arg)
    eta = c @ amp
    rate = -(s @ (amp * omega))
    slope_x = s @ (amp * k * costh)
    slope_y = s @ (amp * k * sinth)
    return eta, rate, slope_x, slope_y


def run_control_step(
    q,
    v,
    t,
    dt,
    n_sub,
    inverse_mass,
    stiffness,
    damping,
    gain,
    anchors,
    attach,
    rest,
    locked,
    force_limit,
    wamp,
    womega,
    wk,
    wcos,
    wsin,
    wphi,
    leg_forces,
):
    """Advance n_sub physics substeps under a held PTO force vector.

    Returns (q, v, a, t, ext, extvel, leg_extracted, w_exc, w_damp,
    yaw_sq_sum, ok). Extensions and extension rates are for the final state;
    yaw_sq_sum accumulates post-substep yaw^2; ok=False means the state went
    non-finite and the loop stopped early.
    """
    q = np.array(q, dtype=float)
    v = np.array(v, dtype=float)
    a = np.zeros(6)
    wave_arrs = (wamp, womega, wk, wcos, wsin, wphi)
    leg_extracted = np.zeros(3)
    w_exc = 0.0
    w_damp = 0.0
    yaw_sq = 0.0
    ok = True
    # overflow en route to the non-finite check is expected when diverging
    np_err = np.seterr(over="ignore", invalid="ignore")
    try:
        for _ in range(int(n_sub)):
            q, v, a, d_exc, d_damp, d_pto = _plant._step_arrays(
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
            )
            t = t + dt
            if not (np.all(np.isfinite(q)) and np.all(np.isfinite(v))):
                ok = False
                break
            w_exc += d_exc
            w_damp += d_damp
            leg_extracted += d_pto
            yaw_sq += q[5] * q[5]
    finally:
        np.seterr(**np_err)
    if ok:
        ext, jac = _plant._leg_geometry(q, anchors, attach, rest)
        extvel = jac @ v
    else:
        ext = np.zeros(3)
        extvel = np.zeros(3)
    return q, v, a, t, ext, extvel, leg_extracted, w_exc, w_damp, yaw_sq, ok


def run_sd_episode(
    q,
    v,
    t,
    dt,
    n_steps,
    inverse_mass,
    stiffness,
    damping,
    gain,
    anchors,
    attach,
    rest,
    locked,
    force_limit,
    wamp,
    womega,
    wk,
    wcos,
    wsin,
    wphi,
    spring_k,
    damping_c,
    settle_steps,
):
    """Run a spring-damper episode, recomputing the SD law every substep.

    The generator force is k * extension + c * extension_rate per leg; the
    force applied to the body is its negative, clamped to the force limit.
    Work extracted and yaw^2 accumulate only after ``settle_steps``. Returns
    (q, v, t, leg_extracted, yaw_sq_sum, counted, ok).
    """
    q = np.array(q, dtype=float)
    v = np.array(v, dtype=float)
    wave_arrs = (wamp, womega, wk, wcos, wsin, wphi)
    leg_extracted = np.zeros(3)
    yaw_sq = 0.0
    counted = 0
    ok = True
    np_err = np.seterr(over="ignore", invalid="ignore")
    try:
        for step in range(int(n_steps)):
            ext, jac = _plant._leg_geometry(q, anchors, attach, rest)
            extvel = jac @ v
            gen = spring_k * ext + damping_c * extvel
            applied = np.clip(-gen, -force_limit, force_limit)
            q, v, _, d_exc, d_damp, d_pto = _plant._step_arrays(
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
                applied,
            )
            t = t + dt
            if not (np.all(np.isfinite(q)) and np.all(np.isfinite(v))):
                ok = False
                break
            if step >= settle_steps:
                leg_extracted += d_pto
                yaw_sq += q[5] * q[5]
                counted += 1
    finally:
        np.seterr(**np_err)
    return q, v, t, leg_extracted, yaw_sq, counted, ok
