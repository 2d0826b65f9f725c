"""Numba kernels for the 1 kHz rigid-body/contact inner loop.

The public modules (:mod:`.plant`, :mod:`.env`) wrap these; they exist only
because the simulation advances 100 physics substeps per policy step and a
pure-numpy loop at that rate dominates experiment runtime. All math is
float64 with fastmath disabled, so results are deterministic.

Quaternions are [w, x, y, z] scalar-first, matching :mod:`.geometry`.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def quat_to_matrix(q):
    w, x, y, z = q[0], q[1], q[2], q[3]
    R = np.empty((3, 3))
    R[0, 0] = 1.0 - 2.0 * (y * y + z * z)
    R[0, 1] = 2.0 * (x * y - w * z)
    R[0, 2] = 2.0 * (x * z + w * y)
    R[1, 0] = 2.0 * (x * y + w * z)
    R[1, 1] = 1.0 - 2.0 * (x * x + z * z)
    R[1, 2] = 2.0 * (y * z - w * x)
    R[2, 0] = 2.0 * (x * z - w * y)
    R[2, 1] = 2.0 * (y * z + w * x)
    R[2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return R


@njit(cache=True)
def quat_mul(a, b):
    out = np.empty(4)
    out[0] = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
    out[1] = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2]
    out[2] = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1]
    out[3] = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]
    return out


@njit(cache=True)
def rotvec_to_quat(rv):
    theta = np.sqrt(rv[0] * rv[0] + rv[1] * rv[1] + rv[2] * rv[2])
    out = np.empty(4)
    if theta < 1e-8:
        w = 1.0 - theta * theta / 8.0
        s = 0.5 - theta * theta / 48.0
    else:
        w = np.cos(0.5 * theta)
        s = np.sin(0.5 * theta) / theta
    out[0] = w
    out[1] = s * rv[0]
    out[2] = s * rv[1]
    out[3] = s * rv[2]
    n = np.sqrt(out[0] ** 2 + out[1] ** 2 + out[2] ** 2 + out[3] ** 2)
    return out / n


@njit(cache=True)
def quat_diff_rotvec(q_des, q):
    """Rotation vector of q_des * conj(q), canonicalized to the w >= 0 cover."""
    e = np.empty(4)
    e[0] = q_des[0] * q[0] + q_des[1] * q[1] + q_des[2] * q[2] + q_des[3] * q[3]
    e[1] = -q_des[0] * q[1] + q_des[1] * q[0] - q_des[2] * q[3] + q_des[3] * q[2]
    e[2] = -q_des[0] * q[2] + q_des[1] * q[3] + q_des[2] * q[0] - q_des[3] * q[1]
    e[3] = -q_des[0] * q[3] - q_des[1] * q[2] + q_des[2] * q[1] + q_des[3] * q[0]
    n = np.sqrt(e[0] ** 2 + e[1] ** 2 + e[2] ** 2 + e[3] ** 2)
    e /= n
    if e[0] < 0.0:
        e = -e
    s = np.sqrt(e[1] * e[1] + e[2] * e[2] + e[3] * e[3])
    w = e[0]
    if s < 1e-8:
        factor = 2.0 / w - 2.0 * s * s / (3.0 * w**3)
    else:
        factor = 2.0 * np.arctan2(s, w) / s
    out = np.empty(3)
    out[0] = factor * e[1]
    out[1] = factor * e[2]
    out[2] = factor * e[3]
    return out


@njit(cache=True)
def contact(p, R, v, w, corners, cx, cy, depth, chamfer, kc, dc):
    """Penalty wrench on the block from the channel walls, floor and plate top.

    The plate is solid below z = depth everywhere except the rectangular
    channel |x| < cx, |y| < cy (floor at z = 0). A 45-degree chamfer widens
    the opening over the top `chamfer` meters; its pushback is modelled as
    horizontal, which funnels without resisting descent. For every block
    corner inside material, the exit direction of minimum distance defines
    the contact normal; the normal force is a spring-damper, clamped to be
    non-adhesive. Returns (force, torque, any_contact, max_penetration).
    """
    f = np.zeros(3)
    tau = np.zeros(3)
    hit = False
    max_pen = 0.0
    for i in range(8):
        rx = R[0, 0] * corners[i, 0] + R[0, 1] * corners[i, 1] + R[0, 2] * corners[i, 2]
        ry = R[1, 0] * corners[i, 0] + R[1, 1] * corners[i, 1] + R[1, 2] * corners[i, 2]
        rz = R[2, 0] * corners[i, 0] + R[2, 1] * corners[i, 1] + R[2, 2] * corners[i, 2]
        wx = p[0] + rx
        wy = p[1] + ry
        wz = p[2] + rz
        if wz >= depth:
            continue
        widen = wz - (depth - chamfer)
        if widen < 0.0:
            widen = 0.0
        cxe = cx + widen
        cye = cy + widen
        dx = abs(wx) - cxe
        dy = abs(wy) - cye
        in_x = dx <= 0.0
        in_y = dy <= 0.0
        nx = 0.0
        ny = 0.0
        nz = 0.0
        if in_x and in_y:
            if wz >= 0.0:
                continue  # free inside the channel
            pen = -wz
            nz = 1.0
        else:
            pen = depth - wz  # exit up through the plate top
            nz = 1.0
            if in_y and not in_x:
                if dx < pen:
                    pen = dx
                    nx = -1.0 if wx > 0.0 else 1.0
                    nz = 0.0
            elif in_x and not in_y:
                if dy < pen:
                    pen = dy
                    ny = -1.0 if wy > 0.0 else 1.0
                    nz = 0.0
            else:
                diag = np.sqrt(dx * dx + dy * dy)
                if diag < pen:
                    pen = diag
                    nx = -(dx / diag) * (1.0 if wx > 0.0 else -1.0)
                    ny = -(dy / diag) * (1.0 if wy > 0.0 else -1.0)
                    nz = 0.0
        # corner velocity v + w x r
        vcx = v[0] + w[1] * rz - w[2] * ry
        vcy = v[1] + w[2] * rx - w[0] * rz
        vcz = v[2] + w[0] * ry - w[1] * rx
        vn = vcx * nx + vcy * ny + vcz * nz
        fs = kc * pen - dc * vn
        if fs < 0.0:
            fs = 0.0
        fx = fs * nx
        fy = fs * ny
        fz = fs * nz
        f[0] += fx
        f[1] += fy
        f[2] += fz
        tau[0] += ry * fz - rz * fy
        tau[1] += rz * fx - rx * fz
        tau[2] += rx * fy - ry * fx
        hit = True
        if pen > max_pen:
            max_pen = pen
    return f, tau, hit, max_pen


@njit(cache=True)
def run_substeps(
    p,
    q,
    v,
    w,
    mass,
    inv_inertia,
    kp,
    kq,
    dl,
    da,
    sp_p,
    sp_q,
    ext_f,
    ext_tau,
    corners,
    cx,
    cy,
    depth,
    chamfer,
    kc,
    dc,
    contact_on,
    n_sub,
    dt,
):
    """Semi-implicit Euler integration of the impedance-driven rigid body.

    Returns (p, q, v, w, ok, any_contact, max_penetration, bad_force).
    ``ok`` is False when a non-finite acceleration appears; ``bad_force`` then
    carries the offending total force for diagnostics.
    """
    p = p.copy()
    q = q.copy()
    v = v.copy()
    w = w.copy()
    any_contact = False
    max_pen = 0.0
    bad = np.zeros(3)
    for _ in range(n_sub):
        # impedance wrench toward the setpoint
        fx = (
            kp[0, 0] * (sp_p[0] - p[0]) + kp[0, 1] * (sp_p[1] - p[1]) + kp[0, 2] * (sp_p[2] - p[2])
            - (dl[0, 0] * v[0] + dl[0, 1] * v[1] + dl[0, 2] * v[2])
            + ext_f[0]
        )
        fy = (
            kp[1, 0] * (sp_p[0] - p[0]) + kp[1, 1] * (sp_p[1] - p[1]) + kp[1, 2] * (sp_p[2] - p[2])
            - (dl[1, 0] * v[0] + dl[1, 1] * v[1] + dl[1, 2] * v[2])
            + ext_f[1]
        )
        fz = (
            kp[2, 0] * (sp_p[0] - p[0]) + kp[2, 1] * (sp_p[1] - p[1]) + kp[2, 2] * (sp_p[2] - p[2])
            - (dl[2, 0] * v[0] + dl[2, 1] * v[1] + dl[2, 2] * v[2])
            + ext_f[2]
        )
        rv = quat_diff_rotvec(sp_q, q)
        tx = (
            kq[0, 0] * rv[0] + kq[0, 1] * rv[1] + kq[0, 2] * rv[2]
            - (da[0, 0] * w[0] + da[0, 1] * w[1] + da[0, 2] * w[2])
            + ext_tau[0]
        )
        ty = (
            kq[1, 0] * rv[0] + kq[1, 1] * rv[1] + kq[1, 2] * rv[2]
            - (da[1, 0] * w[0] + da[1, 1] * w[1] + da[1, 2] * w[2])
            + ext_tau[1]
        )
        tz = (
            kq[2, 0] * rv[0] + kq[2, 1] * rv[1] + kq[2, 2] * rv[2]
            - (da[2, 0] * w[0] + da[2, 1] * w[1] + da[2, 2] * w[2])
            + ext_tau[2]
        )
        if contact_on:
            R = quat_to_matrix(q)
            fc, tc, hit, pen = contact(p, R, v, w, corners, cx, cy, depth, chamfer, kc, dc)
            fx += fc[0]
            fy += fc[1]
            fz += fc[2]
            tx += tc[0]
            ty += tc[1]
            tz += tc[2]
            if hit:
                any_contact = True
            if pen > max_pen:
                max_pen = pen
        if not (np.isfinite(fx) and np.isfinite(fy) and np.isfinite(fz)
                and np.isfinite(tx) and np.isfinite(ty) and np.isfinite(tz)):
            bad[0] = fx
            bad[1] = fy
            bad[2] = fz
            return p, q, v, w, False, any_contact, max_pen, bad
        # semi-implicit Euler: velocity first, then position with new velocity
        v[0] += fx / mass * dt
        v[1] += fy / mass * dt
        v[2] += fz / mass * dt
        p[0] += v[0] * dt
        p[1] += v[1] * dt
        p[2] += v[2] * dt
        w[0] += (inv_inertia[0, 0] * tx + inv_inertia[0, 1] * ty + inv_inertia[0, 2] * tz) * dt
        w[1] += (inv_inertia[1, 0] * tx + inv_inertia[1, 1] * ty + inv_inertia[1, 2] * tz) * dt
        w[2] += (inv_inertia[2, 0] * tx + inv_inertia[2, 1] * ty + inv_inertia[2, 2] * tz) * dt
        wn = np.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
        if wn > 0.0:
            step_rv = np.empty(3)
            step_rv[0] = w[0] * dt
            step_rv[1] = w[1] * dt
            step_rv[2] = w[2] * dt
            q = quat_mul(rotvec_to_quat(step_rv), q)
            qn = np.sqrt(q[0] ** 2 + q[1] ** 2 + q[2] ** 2 + q[3] ** 2)
            q /= qn
    return p, q, v, w, True, any_contact, max_pen, bad
