# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel backend.

Same three entry points and return structures as the pure-Python module;
the plant stepping math mirrors the array-level reference implementation.
An equivalence test keeps the two backends pinned together.
"""

import numpy as np

from libc.math cimport sin, cos, sqrt, isfinite


def wave_fields(amp, omega, k, costh, sinth, phi, x, y, t):
    """Superpose components at point (x, y) over an array of times."""
    t_arr = np.ascontiguousarray(np.atleast_1d(np.asarray(t, dtype=np.float64)))
    cdef const double[::1] amp_v = np.ascontiguousarray(amp, dtype=np.float64)
    cdef const double[::1] omega_v = np.ascontiguousarray(omega, dtype=np.float64)
    cdef const double[::1] k_v = np.ascontiguousarray(k, dtype=np.float64)
    cdef const double[::1] costh_v = np.ascontiguousarray(costh, dtype=np.float64)
    cdef const double[::1] sinth_v = np.ascontiguousarray(sinth, dtype=np.float64)
    cdef const double[::1] phi_v = np.ascontiguousarray(phi, dtype=np.float64)
    cdef const double[::1] t_v = t_arr
    cdef Py_ssize_t nt = t_v.shape[0]
    cdef Py_ssize_t nc = amp_v.shape[0]
    eta_arr = np.empty(nt)
    rate_arr = np.empty(nt)
    sx_arr = np.empty(nt)
    sy_arr = np.empty(nt)
    cdef double[::1] eta = eta_arr
    cdef double[::1] rate = rate_arr
    cdef double[::1] sx = sx_arr
    cdef double[::1] sy = sy_arr
    cdef double xx = x, yy = y
    cdef Py_ssize_t i, j
    cdef double arg, c, s, a_e, a_r, a_x, a_y, spatial
    with nogil:
        for i in range(nt):
            a_e = 0.0
            a_r = 0.0
            a_x = 0.0
            a_y = 0.0
            for j in range(nc):
                spatial = k_v[j] * (xx * costh_v[j] + yy * sinth_v[j])
                arg = omega_v[j] * t_v[i] - spatial + phi_v[j]
                c = cos(arg)
                s = sin(arg)
                a_e += amp_v[j] * c
                a_r -= amp_v[j] * omega_v[j] * s
                a_x += amp_v[j] * k_v[j] * costh_v[j] * s
                a_y += amp_v[j] * k_v[j] * sinth_v[j] * s
            eta[i] = a_e
            rate[i] = a_r
            sx[i] = a_x
            sy[i] = a_y
    return eta_arr, rate_arr, sx_arr, sy_arr


cdef void _mat3_mul(double a[3][3], double b[3][3], double out[3][3]) noexcept nogil:
    cdef int i, j, m
    cdef double acc
    for i in range(3):
        for j in range(3):
            acc = 0.0
            for m in range(3):
                acc += a[i][m] * b[m][j]
            out[i][j] = acc


cdef int _geometry(
    const double* q,
    const double[:, ::1] anchors,
    const double[:, ::1] attach,
    const double[::1] rest,
    double* ext,
    double jac[3][6],
) noexcept nogil:
    """Leg extensions and d(extension)/d(pose); returns -1 on a collapsed leg."""
    cdef double cr = cos(q[3]), sr = sin(q[3])
    cdef double cp = cos(q[4]), sp = sin(q[4])
    cdef double cy = cos(q[5]), sy = sin(q[5])
    cdef double rx[3][3]
    cdef double ry[3][3]
    cdef double rz[3][3]
    cdef double drx[3][3]
    cdef double dry[3][3]
    cdef double drz[3][3]
    cdef double r[3][3]
    cdef double p0[3][3]
    cdef double p1[3][3]
    cdef double p2[3][3]
    cdef double tmp[3][3]
    cdef int i, a, m
    rx[0][0] = 1.0; rx[0][1] = 0.0; rx[0][2] = 0.0
    rx[1][0] = 0.0; rx[1][1] = cr; rx[1][2] = -sr
    rx[2][0] = 0.0; rx[2][1] = sr; rx[2][2] = cr
    ry[0][0] = cp; ry[0][1] = 0.0; ry[0][2] = sp
    ry[1][0] = 0.0; ry[1][1] = 1.0; ry[1][2] = 0.0
    ry[2][0] = -sp; ry[2][1] = 0.0; ry[2][2] = cp
    rz[0][0] = cy; rz[0][1] = -sy; rz[0][2] = 0.0
    rz[1][0] = sy; rz[1][1] = cy; rz[1][2] = 0.0
    rz[2][0] = 0.0; rz[2][1] = 0.0; rz[2][2] = 1.0
    drx[0][0] = 0.0; drx[0][1] = 0.0; drx[0][2] = 0.0
    drx[1][0] = 0.0; drx[1][1] = -sr; drx[1][2] = -cr
    drx[2][0] = 0.0; drx[2][1] = cr; drx[2][2] = -sr
    dry[0][0] = -sp; dry[0][1] = 0.0; dry[0][2] = cp
    dry[1][0] = 0.0; dry[1][1] = 0.0; dry[1][2] = 0.0
    dry[2][0] = -cp; dry[2][1] = 0.0; dry[2][2] = -sp
    drz[0][0] = -sy; drz[0][1] = -cy; drz[0][2] = 0.0
    drz[1][0] = cy; drz[1][1] = -sy; drz[1][2] = 0.0
    drz[2][0] = 0.0; drz[2][1] = 0.0; drz[2][2] = 0.0
    _mat3_mul(ry, rx, tmp)
    _mat3_mul(rz, tmp, r)
    _mat3_mul(ry, drx, tmp)
    _mat3_mul(rz, tmp, p0)
    _mat3_mul(dry, rx, tmp)
    _mat3_mul(rz, tmp, p1)
    _mat3_mul(ry, rx, tmp)
    _mat3_mul(drz, tmp, p2)

    cdef double rho[3]
    cdef double world[3]
    cdef double d[3]
    cdef double u[3]
    cdef double prho[3]
    cdef double length, acc
    for i in range(3):
        for m in range(3):
            rho[m] = attach[i, m]
        for m in range(3):
            world[m] = q[m] + r[m][0] * rho[0] + r[m][1] * rho[1] + r[m][2] * rho[2]
            d[m] = world[m] - anchors[i, m]
        length = sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
        if length < 1e-9:
            return -1
        for m in range(3):
            u[m] = d[m] / length
        ext[i] = length - rest[i]
        jac[i][0] = u[0]
        jac[i][1] = u[1]
        jac[i][2] = u[2]
        for a in range(3):
            if a == 0:
                for m in range(3):
                    prho[m] = p0[m][0] * rho[0] + p0[m][1] * rho[1] + p0[m][2] * rho[2]
            elif a == 1:
                for m in range(3):
                    prho[m] = p1[m][0] * rho[0] + p1[m][1] * rho[1] + p1[m][2] * rho[2]
            else:
                for m in range(3):
                    prho[m] = p2[m][0] * rho[0] + p2[m][1] * rho[1] + p2[m][2] * rho[2]
            jac[i][3 + a] = u[0] * prho[0] + u[1] * prho[1] + u[2] * prho[2]
    return 0


cdef void _excitation(
    const double[::1] wamp,
    const double[::1] womega,
    const double[::1] wk,
    const double[::1] wcos,
    const double[::1] wsin,
    const double[::1] wphi,
    double x,
    double y,
    double t,
    double* eta,
    double* sx,
    double* sy,
) noexcept nogil:
    cdef Py_ssize_t j
    cdef double arg, s, c
    cdef double a_e = 0.0, a_x = 0.0, a_y = 0.0
    for j in range(wamp.shape[0]):
        arg = womega[j] * t - wk[j] * (x * wcos[j] + y * wsin[j]) + wphi[j]
        s = sin(arg)
        c = cos(arg)
        a_e += wamp[j] * c
        a_x += wamp[j] * wk[j] * wcos[j] * s
        a_y += wamp[j] * wk[j] * wsin[j] * s
    eta[0] = a_e
    sx[0] = a_x
    sy[0] = a_y


# Signal index feeding each DOF: elevation=0, x-slope=1, y-slope=2.
cdef int PAIRING[6]
PAIRING[0] = 1
PAIRING[1] = 2
PAIRING[2] = 0
PAIRING[3] = 2
PAIRING[4] = 1
PAIRING[5] = 2


cdef int _substep(
    double* q,
    double* v,
    double t,
    double dt,
    const double[:, ::1] inverse_mass,
    const double[:, ::1] stiffness,
    const double[:, ::1] damping,
    const double[::1] gain,
    const double[:, ::1] anchors,
    const double[:, ::1] attach,
    const double[::1] rest,
    const unsigned char[::1] locked,
    double force_limit,
    const double[::1] wamp,
    const double[::1] womega,
    const double[::1] wk,
    const double[::1] wcos,
    const double[::1] wsin,
    const double[::1] wphi,
    const double* leg_forces,
    double* a_out,
    double* d_exc,
    double* d_damp,
    double* d_pto,
) noexcept nogil:
    """One semi-implicit Euler substep; work increments use midpoint velocity."""
    cdef double ext[3]
    cdef double jac[3][6]
    cdef double f[3]
    cdef double wrench[6]
    cdef double damp_force[6]
    cdef double total[6]
    cdef double a[6]
    cdef double v2[6]
    cdef double v_mid[6]
    cdef double eta, sx, sy, acc, rate
    cdef double sig[3]
    cdef int i, j
    if _geometry(q, anchors, attach, rest, ext, jac) != 0:
        return -1
    for i in range(3):
        f[i] = leg_forces[i]
        if f[i] > force_limit:
            f[i] = force_limit
        elif f[i] < -force_limit:
            f[i] = -force_limit
    _excitation(wamp, womega, wk, wcos, wsin, wphi, q[0], q[1], t, &eta, &sx, &sy)
    sig[0] = eta
    sig[1] = sx
    sig[2] = sy
    for i in range(6):
        wrench[i] = gain[i] * sig[PAIRING[i]]
    for i in range(6):
        acc = 0.0
        for j in range(6):
            acc += damping[i, j] * v[j]
        damp_force[i] = acc
    for i in range(6):
        acc = -damp_force[i] + wrench[i]
        for j in range(6):
            acc -= stiffness[i, j] * q[j]
        for j in range(3):
            acc += jac[j][i] * f[j]
        total[i] = acc
    for i in range(6):
        acc = 0.0
        for j in range(6):
            acc += inverse_mass[i, j] * total[j]
        a[i] = acc
    for i in range(6):
        if locked[i]:
            a[i] = 0.0
        v2[i] = v[i] + dt * a[i]
        if locked[i]:
            v2[i] = 0.0
        v_mid[i] = 0.5 * (v[i] + v2[i])
    d_exc[0] = 0.0
    d_damp[0] = 0.0
    for i in range(6):
        d_exc[0] += wrench[i] * v_mid[i]
        d_damp[0] += damp_force[i] * v_mid[i]
    d_exc[0] *= dt
    d_damp[0] *= dt
    for j in range(3):
        rate = 0.0
        for i in range(6):
            rate += jac[j][i] * v_mid[i]
        d_pto[j] = -dt * f[j] * rate
    for i in range(6):
        q[i] = q[i] + dt * v2[i]
        v[i] = v2[i]
        a_out[i] = a[i]
    return 0


cdef bint _finite6(const double* q, const double* v) noexcept nogil:
    cdef int i
    for i in range(6):
        if not (isfinite(q[i]) and isfinite(v[i])):
            return False
    return True


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
    """Advance n_sub physics substeps under a held PTO force vector."""
    q_arr = np.array(q, dtype=np.float64)
    v_arr = np.array(v, dtype=np.float64)
    a_arr = np.zeros(6)
    ext_arr = np.zeros(3)
    extvel_arr = np.zeros(3)
    pto_arr = np.zeros(3)
    cdef double[::1] q_v = q_arr
    cdef double[::1] v_v = v_arr
    cdef double[::1] a_v = a_arr
    cdef double[::1] ext_v = ext_arr
    cdef double[::1] extvel_v = extvel_arr
    cdef double[::1] pto_v = pto_arr
    cdef const double[:, ::1] im_v = np.ascontiguousarray(inverse_mass, dtype=np.float64)
    cdef const double[:, ::1] st_v = np.ascontiguousarray(stiffness, dtype=np.float64)
    cdef const double[:, ::1] da_v = np.ascontiguousarray(damping, dtype=np.float64)
    cdef const double[::1] gain_v = np.ascontiguousarray(gain, dtype=np.float64)
    cdef const double[:, ::1] an_v = np.ascontiguousarray(anchors, dtype=np.float64)
    cdef const double[:, ::1] at_v = np.ascontiguousarray(attach, dtype=np.float64)
    cdef const double[::1] rest_v = np.ascontiguousarray(rest, dtype=np.float64)
    cdef const unsigned char[::1] lock_v = np.ascontiguousarray(locked, dtype=np.uint8)
    cdef const double[::1] wamp_v = np.ascontiguousarray(wamp, dtype=np.float64)
    cdef const double[::1] womega_v = np.ascontiguousarray(womega, dtype=np.float64)
    cdef const double[::1] wk_v = np.ascontiguousarray(wk, dtype=np.float64)
    cdef const double[::1] wcos_v = np.ascontiguousarray(wcos, dtype=np.float64)
    cdef const double[::1] wsin_v = np.ascontiguousarray(wsin, dtype=np.float64)
    cdef const double[::1] wphi_v = np.ascontiguousarray(wphi, dtype=np.float64)
    cdef const double[::1] f_v = np.ascontiguousarray(leg_forces, dtype=np.float64)
    cdef double flim = force_limit
    cdef double tt = t
    cdef double h = dt
    cdef Py_ssize_t steps = int(n_sub)
    cdef double w_exc = 0.0, w_damp = 0.0, yaw_sq = 0.0
    cdef double de, dd
    cdef double dp[3]
    cdef double ext_c[3]
    cdef double jac_c[3][6]
    cdef bint ok = True
    cdef Py_ssize_t s
    cdef int i, j
    cdef double acc
    with nogil:
        for s in range(steps):
            if _substep(
                &q_v[0], &v_v[0], tt, h,
                im_v, st_v, da_v, gain_v, an_v, at_v, rest_v, lock_v, flim,
                wamp_v, womega_v, wk_v, wcos_v, wsin_v, wphi_v,
                &f_v[0], &a_v[0], &de, &dd, dp,
            ) != 0:
                ok = False
                break
            tt += h
            if not _finite6(&q_v[0], &v_v[0]):
                ok = False
                break
            w_exc += de
            w_damp += dd
            for i in range(3):
                pto_v[i] += dp[i]
            yaw_sq += q_v[5] * q_v[5]
        if ok:
            if _geometry(&q_v[0], an_v, at_v, rest_v, ext_c, jac_c) != 0:
                ok = False
            else:
                for i in range(3):
                    ext_v[i] = ext_c[i]
                    acc = 0.0
                    for j in range(6):
                        acc += jac_c[i][j] * v_v[j]
                    extvel_v[i] = acc
    return (
        q_arr,
        v_arr,
        a_arr,
        tt,
        ext_arr,
        extvel_arr,
        pto_arr,
        w_exc,
        w_damp,
        yaw_sq,
        bool(ok),
    )


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
    """Spring-damper episode with the SD law recomputed every substep."""
    q_arr = np.array(q, dtype=np.float64)
    v_arr = np.array(v, dtype=np.float64)
    pto_arr = np.zeros(3)
    cdef double[::1] q_v = q_arr
    cdef double[::1] v_v = v_arr
    cdef double[::1] pto_v = pto_arr
    cdef const double[:, ::1] im_v = np.ascontiguousarray(inverse_mass, dtype=np.float64)
    cdef const double[:, ::1] st_v = np.ascontiguousarray(stiffness, dtype=np.float64)
    cdef const double[:, ::1] da_v = np.ascontiguousarray(damping, dtype=np.float64)
    cdef const double[::1] gain_v = np.ascontiguousarray(gain, dtype=np.float64)
    cdef const double[:, ::1] an_v = np.ascontiguousarray(anchors, dtype=np.float64)
    cdef const double[:, ::1] at_v = np.ascontiguousarray(attach, dtype=np.float64)
    cdef const double[::1] rest_v = np.ascontiguousarray(rest, dtype=np.float64)
    cdef const unsigned char[::1] lock_v = np.ascontiguousarray(locked, dtype=np.uint8)
    cdef const double[::1] wamp_v = np.ascontiguousarray(wamp, dtype=np.float64)
    cdef const double[::1] womega_v = np.ascontiguousarray(womega, dtype=np.float64)
    cdef const double[::1] wk_v = np.ascontiguousarray(wk, dtype=np.float64)
    cdef const double[::1] wcos_v = np.ascontiguousarray(wcos, dtype=np.float64)
    cdef const double[::1] wsin_v = np.ascontiguousarray(wsin, dtype=np.float64)
    cdef const double[::1] wphi_v = np.ascontiguousarray(wphi, dtype=np.float64)
    cdef const double[::1] k_v = np.ascontiguousarray(spring_k, dtype=np.float64)
    cdef const double[::1] c_v = np.ascontiguousarray(damping_c, dtype=np.float64)
    cdef double flim = force_limit
    cdef double tt = t
    cdef double h = dt
    cdef Py_ssize_t steps = int(n_steps)
    cdef Py_ssize_t settle = int(settle_steps)
    cdef double yaw_sq = 0.0
    cdef double de, dd, acc, rate
    cdef double dp[3]
    cdef double applied[3]
    cdef double ext_c[3]
    cdef double jac_c[3][6]
    cdef double a_scratch[6]
    cdef bint ok = True
    cdef Py_ssize_t s, counted = 0
    cdef int i, j
    with nogil:
        for s in range(steps):
            if _geometry(&q_v[0], an_v, at_v, rest_v, ext_c, jac_c) != 0:
                ok = False
                break
            for i in range(3):
                rate = 0.0
                for j in range(6):
                    rate += jac_c[i][j] * v_v[j]
                acc = k_v[i] * ext_c[i] + c_v[i] * rate
                applied[i] = -acc
                if applied[i] > flim:
                    applied[i] = flim
                elif applied[i] < -flim:
                    applied[i] = -flim
            if _substep(
                &q_v[0], &v_v[0], tt, h,
                im_v, st_v, da_v, gain_v, an_v, at_v, rest_v, lock_v, flim,
                wamp_v, womega_v, wk_v, wcos_v, wsin_v, wphi_v,
                applied, a_scratch, &de, &dd, dp,
            ) != 0:
                ok = False
                break
            tt += h
            if not _finite6(&q_v[0], &v_v[0]):
                ok = False
                break
            if s >= settle:
                for i in range(3):
                    pto_v[i] += dp[i]
                yaw_sq += q_v[5] * q_v[5]
                counted += 1
    return q_arr, v_arr, tt, pto_arr, yaw_sq, int(counted), bool(ok)
