"""Spatial algebra and rigid-body dynamics for serial revolute chains.

All algorithms work in the world frame with 3-vector kinematics: forward
kinematics, geometric Jacobians, the composite-rigid-body mass matrix,
recursive Newton-Euler inverse dynamics, Cholesky-based forward dynamics,
regularized operational-space inertia, and the SO(3) log/exp maps.

The jitted `*_into` kernels write into a preallocated Workspace and are the
single implementation; the module-level functions wrap them for ndarray
callers, while the simulation loop reuses one Workspace across millions of
substeps.  Everything is pure in its visible outputs: identical inputs give
bit-identical results.
"""

from __future__ import annotations

import collections
from dataclasses import dataclass

import numpy as np
from numba import njit

from .model import PackedModel, Pose, RobotModel

LAMBDA_EPS_DEFAULT = 1e-4


# ---------------------------------------------------------------------------
# SO(3) maps


@njit(cache=True, inline="always")
def _rotvec_to_matrix_into(v0, v1, v2, R):
    """Exponential map of the rotation vector (v0, v1, v2) into R."""
    theta2 = v0 * v0 + v1 * v1 + v2 * v2
    theta = np.sqrt(theta2)
    if theta < 1e-10:
        a, b = 1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0
    else:
        a, b = np.sin(theta) / theta, (1.0 - np.cos(theta)) / theta2
    R[0, 0] = 1.0 + b * (-v2 * v2 - v1 * v1)
    R[0, 1] = -a * v2 + b * v0 * v1
    R[0, 2] = a * v1 + b * v0 * v2
    R[1, 0] = a * v2 + b * v0 * v1
    R[1, 1] = 1.0 + b * (-v2 * v2 - v0 * v0)
    R[1, 2] = -a * v0 + b * v1 * v2
    R[2, 0] = -a * v1 + b * v0 * v2
    R[2, 1] = a * v0 + b * v1 * v2
    R[2, 2] = 1.0 + b * (-v1 * v1 - v0 * v0)


@njit(cache=True)
def _rotvec_to_matrix(v):
    R = np.empty((3, 3))
    _rotvec_to_matrix_into(v[0], v[1], v[2], R)
    return R


@njit(cache=True)
def _matrix_to_rotvec(R):
    """Log map: rotation matrix to axis-angle vector with angle in (-pi, pi].

    Near angle pi the axis sign is fixed by making its largest-magnitude
    component positive.
    """
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    c = 0.5 * (tr - 1.0)
    if c > 1.0:
        c = 1.0
    elif c < -1.0:
        c = -1.0
    angle = np.arccos(c)
    v = np.empty(3)
    if angle < 1e-10:
        v[0] = 0.5 * (R[2, 1] - R[1, 2])
        v[1] = 0.5 * (R[0, 2] - R[2, 0])
        v[2] = 0.5 * (R[1, 0] - R[0, 1])
        return v
    if angle > np.pi - 1e-6:
        # R ~ 2 a a^T - I: recover the axis from the dominant column
        B00 = 0.5 * (R[0, 0] + 1.0)
        B11 = 0.5 * (R[1, 1] + 1.0)
        B22 = 0.5 * (R[2, 2] + 1.0)
        if B00 >= B11 and B00 >= B22:
            a0 = np.sqrt(max(B00, 0.0))
            a1 = 0.25 * (R[0, 1] + R[1, 0]) / a0
            a2 = 0.25 * (R[0, 2] + R[2, 0]) / a0
        elif B11 >= B22:
            a1 = np.sqrt(max(B11, 0.0))
            a0 = 0.25 * (R[0, 1] + R[1, 0]) / a1
            a2 = 0.25 * (R[1, 2] + R[2, 1]) / a1
        else:
            a2 = np.sqrt(max(B22, 0.0))
            a0 = 0.25 * (R[0, 2] + R[2, 0]) / a2
            a1 = 0.25 * (R[1, 2] + R[2, 1]) / a2
        norm = np.sqrt(a0 * a0 + a1 * a1 + a2 * a2)
        a0, a1, a2 = a0 / norm, a1 / norm, a2 / norm
        m, mi = abs(a0), 0
        if abs(a1) > m:
            m, mi = abs(a1), 1
        if abs(a2) > m:
            mi = 2
        sign = 1.0
        if (mi == 0 and a0 < 0.0) or (mi == 1 and a1 < 0.0) or (mi == 2 and a2 < 0.0):
            sign = -1.0
        v[0] = sign * a0 * angle
        v[1] = sign * a1 * angle
        v[2] = sign * a2 * angle
        return v
    s = 0.5 * angle / np.sin(angle)
    v[0] = s * (R[2, 1] - R[1, 2])
    v[1] = s * (R[0, 2] - R[2, 0])
    v[2] = s * (R[1, 0] - R[0, 1])
    return v


@njit(cache=True)
def _cross(a, b):
    out = np.empty(3)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


# BLAS dispatch costs microseconds per call; small dense work is hand-rolled.


@njit(cache=True, inline="always")
def _mm33(A, B):
    C = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            C[i, j] = A[i, 0] * B[0, j] + A[i, 1] * B[1, j] + A[i, 2] * B[2, j]
    return C


@njit(cache=True, inline="always")
def _mm33_nt(A, B):
    """A @ B.T"""
    C = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            C[i, j] = A[i, 0] * B[j, 0] + A[i, 1] * B[j, 1] + A[i, 2] * B[j, 2]
    return C


@njit(cache=True, inline="always")
def _mv3(A, v):
    out = np.empty(3)
    for i in range(3):
        out[i] = A[i, 0] * v[0] + A[i, 1] * v[1] + A[i, 2] * v[2]
    return out


@njit(cache=True, inline="always")
def _jtv(J, w):
    """J^T w for a 6xn Jacobian."""
    n = J.shape[1]
    out = np.empty(n)
    for i in range(n):
        s = 0.0
        for k in range(6):
            s += J[k, i] * w[k]
        out[i] = s
    return out


@njit(cache=True, inline="always")
def _jv(J, x):
    """J x: 6xn times n."""
    n = J.shape[1]
    out = np.zeros(6)
    for k in range(6):
        s = 0.0
        for i in range(n):
            s += J[k, i] * x[i]
        out[k] = s
    return out


@njit(cache=True, inline="always")
def _mvn(A, x):
    n = A.shape[0]
    out = np.empty(n)
    for i in range(n):
        s = 0.0
        for k in range(n):
            s += A[i, k] * x[k]
        out[i] = s
    return out


# ---------------------------------------------------------------------------
# workspace


Workspace = collections.namedtuple(
    "Workspace",
    [
        "R", "p", "z", "Ree", "pee",          # frames
        "J", "M", "L", "bias", "grav",         # dynamics caches
        "c", "Iw",                             # per-link CoM / world inertia
        "w", "wd", "ao", "ac",                 # RNEA sweeps
        "lam", "A66", "L66", "X",              # operational-space inertia
        "tw", "u", "wrench", "qdd",            # per-substep vectors
        "zero_n", "tmp_n", "tmp_n2",
        "sp_joint", "sp_jkp", "sp_jkv", "sp_pos", "sp_rot", "sp_tkp", "sp_tkv",
        "t3", "t33", "t6a", "t6b", "t6c",
    ],
)


@njit(cache=True)
def _make_ws(n):
    return Workspace(
        R=np.empty((n, 3, 3)), p=np.empty((n, 3)), z=np.empty((n, 3)),
        Ree=np.empty((3, 3)), pee=np.empty(3),
        J=np.empty((6, n)), M=np.empty((n, n)), L=np.empty((n, n)),
        bias=np.empty(n), grav=np.empty(n),
        c=np.empty((n, 3)), Iw=np.empty((n, 3, 3)),
        w=np.empty((n, 3)), wd=np.empty((n, 3)), ao=np.empty((n, 3)), ac=np.empty((n, 3)),
        lam=np.empty((6, 6)), A66=np.empty((6, 6)), L66=np.empty((6, 6)), X=np.empty((n, 6)),
        tw=np.empty(6), u=np.empty(n), wrench=np.empty(6), qdd=np.empty(n),
        zero_n=np.zeros(n), tmp_n=np.empty(n), tmp_n2=np.empty(n),
        sp_joint=np.empty(n), sp_jkp=np.empty(n), sp_jkv=np.empty(n),
        sp_pos=np.empty(3), sp_rot=np.empty((3, 3)), sp_tkp=np.empty(6), sp_tkv=np.empty(6),
        t3=np.empty(3), t33=np.empty((3, 3)), t6a=np.empty(6), t6b=np.empty(6), t6c=np.empty(6),
    )


def make_workspace(n: int) -> Workspace:
    return _make_ws(n)


# ---------------------------------------------------------------------------
# kinematics


@njit(cache=True)
def _fk_into(pk, q, ws):
    """World-frame link frames for q: fills ws.R, ws.p, ws.z, ws.Ree, ws.pee."""
    n = pk.mass.shape[0]
    R, p, z = ws.R, ws.p, ws.z
    Rq = ws.t33
    for i in range(n):
        off_R = pk.R_off[i]
        off_p = pk.p_off[i]
        ax = pk.axis[i]
        if i == 0:
            for a in range(3):
                p[0, a] = off_p[a]
            # R_joint = R_off directly at the base
            _rotvec_to_matrix_into(ax[0] * q[0], ax[1] * q[0], ax[2] * q[0], Rq)
            for a in range(3):
                z[0, a] = off_R[a, 0] * ax[0] + off_R[a, 1] * ax[1] + off_R[a, 2] * ax[2]
                for b in range(3):
                    R[0, a, b] = (off_R[a, 0] * Rq[0, b] + off_R[a, 1] * Rq[1, b]
                                  + off_R[a, 2] * Rq[2, b])
        else:
            Rp = R[i - 1]
            # joint frame before rotation: Rj = Rp @ off_R (scratch in R[i])
            Ri = R[i]
            for a in range(3):
                p[i, a] = (p[i - 1, a] + Rp[a, 0] * off_p[0] + Rp[a, 1] * off_p[1]
                           + Rp[a, 2] * off_p[2])
                for b in range(3):
                    Ri[a, b] = Rp[a, 0] * off_R[0, b] + Rp[a, 1] * off_R[1, b] \
                        + Rp[a, 2] * off_R[2, b]
            for a in range(3):
                z[i, a] = Ri[a, 0] * ax[0] + Ri[a, 1] * ax[1] + Ri[a, 2] * ax[2]
            _rotvec_to_matrix_into(ax[0] * q[i], ax[1] * q[i], ax[2] * q[i], Rq)
            # R[i] = Rj @ Rq, in place via row scratch
            for a in range(3):
                r0 = Ri[a, 0] * Rq[0, 0] + Ri[a, 1] * Rq[1, 0] + Ri[a, 2] * Rq[2, 0]
                r1 = Ri[a, 0] * Rq[0, 1] + Ri[a, 1] * Rq[1, 1] + Ri[a, 2] * Rq[2, 1]
                r2 = Ri[a, 0] * Rq[0, 2] + Ri[a, 1] * Rq[1, 2] + Ri[a, 2] * Rq[2, 2]
                Ri[a, 0] = r0
                Ri[a, 1] = r1
                Ri[a, 2] = r2
    Rn = R[n - 1]
    for a in range(3):
        ws.pee[a] = (p[n - 1, a] + Rn[a, 0] * pk.p_ee[0] + Rn[a, 1] * pk.p_ee[1]
                     + Rn[a, 2] * pk.p_ee[2])
        for b in range(3):
            ws.Ree[a, b] = (Rn[a, 0] * pk.R_ee[0, b] + Rn[a, 1] * pk.R_ee[1, b]
                            + Rn[a, 2] * pk.R_ee[2, b])


@njit(cache=True)
def _jac_into(ws):
    """Geometric Jacobian from filled frames: columns (z_i x (pee - p_i), z_i)."""
    n = ws.p.shape[0]
    J, p, z, pee = ws.J, ws.p, ws.z, ws.pee
    for i in range(n):
        rx = pee[0] - p[i, 0]
        ry = pee[1] - p[i, 1]
        rz = pee[2] - p[i, 2]
        J[0, i] = z[i, 1] * rz - z[i, 2] * ry
        J[1, i] = z[i, 2] * rx - z[i, 0] * rz
        J[2, i] = z[i, 0] * ry - z[i, 1] * rx
        J[3, i] = z[i, 0]
        J[4, i] = z[i, 1]
        J[5, i] = z[i, 2]


@njit(cache=True)
def _com_inertia_into(pk, ws):
    """World CoM positions and rotational inertias from filled frames."""
    n = pk.mass.shape[0]
    for i in range(n):
        Ri = ws.R[i]
        com = pk.com[i]
        for a in range(3):
            ws.c[i, a] = ws.p[i, a] + Ri[a, 0] * com[0] + Ri[a, 1] * com[1] + Ri[a, 2] * com[2]
        Ib = pk.inertia[i]
        # Iw = R Ib R^T, unrolled through a row scratch
        for a in range(3):
            t0 = Ri[a, 0] * Ib[0, 0] + Ri[a, 1] * Ib[1, 0] + Ri[a, 2] * Ib[2, 0]
            t1 = Ri[a, 0] * Ib[0, 1] + Ri[a, 1] * Ib[1, 1] + Ri[a, 2] * Ib[2, 1]
            t2 = Ri[a, 0] * Ib[0, 2] + Ri[a, 1] * Ib[1, 2] + Ri[a, 2] * Ib[2, 2]
            for b in range(3):
                ws.Iw[i, a, b] = t0 * Ri[b, 0] + t1 * Ri[b, 1] + t2 * Ri[b, 2]


# ---------------------------------------------------------------------------
# dynamics


@njit(cache=True)
def _crba_into(pk, ws):
    """Composite-rigid-body mass matrix into ws.M (requires frames + CoM)."""
    n = pk.mass.shape[0]
    M, c, Iw, p, z = ws.M, ws.c, ws.Iw, ws.p, ws.z
    mc = 0.0
    cc0 = cc1 = cc2 = 0.0
    Ic = ws.t33
    for a in range(3):
        for b in range(3):
            Ic[a, b] = 0.0
    for j in range(n - 1, -1, -1):
        mj = pk.mass[j]
        m_new = mc + mj
        nc0 = (mj * c[j, 0] + mc * cc0) / m_new
        nc1 = (mj * c[j, 1] + mc * cc1) / m_new
        nc2 = (mj * c[j, 2] + mc * cc2) / m_new
        # shift link j inertia to the new composite CoM
        d0 = c[j, 0] - nc0
        d1 = c[j, 1] - nc1
        d2 = c[j, 2] - nc2
        dd = d0 * d0 + d1 * d1 + d2 * d2
        i00 = Iw[j, 0, 0] + mj * (dd - d0 * d0)
        i01 = Iw[j, 0, 1] - mj * d0 * d1
        i02 = Iw[j, 0, 2] - mj * d0 * d2
        i11 = Iw[j, 1, 1] + mj * (dd - d1 * d1)
        i12 = Iw[j, 1, 2] - mj * d1 * d2
        i22 = Iw[j, 2, 2] + mj * (dd - d2 * d2)
        if mc > 0.0:
            e0 = cc0 - nc0
            e1 = cc1 - nc1
            e2 = cc2 - nc2
            ee = e0 * e0 + e1 * e1 + e2 * e2
            i00 += Ic[0, 0] + mc * (ee - e0 * e0)
            i01 += Ic[0, 1] - mc * e0 * e1
            i02 += Ic[0, 2] - mc * e0 * e2
            i11 += Ic[1, 1] + mc * (ee - e1 * e1)
            i12 += Ic[1, 2] - mc * e1 * e2
            i22 += Ic[2, 2] + mc * (ee - e2 * e2)
        Ic[0, 0], Ic[0, 1], Ic[0, 2] = i00, i01, i02
        Ic[1, 0], Ic[1, 1], Ic[1, 2] = i01, i11, i12
        Ic[2, 0], Ic[2, 1], Ic[2, 2] = i02, i12, i22
        mc, cc0, cc1, cc2 = m_new, nc0, nc1, nc2
        # unit acceleration of joint j: wrench of composite j about its CoM
        zx, zy, zz = z[j, 0], z[j, 1], z[j, 2]
        rx = cc0 - p[j, 0]
        ry = cc1 - p[j, 1]
        rz = cc2 - p[j, 2]
        ax = zy * rz - zz * ry
        ay = zz * rx - zx * rz
        az = zx * ry - zy * rx
        fx, fy, fz = mc * ax, mc * ay, mc * az
        n0 = Ic[0, 0] * zx + Ic[0, 1] * zy + Ic[0, 2] * zz
        n1 = Ic[1, 0] * zx + Ic[1, 1] * zy + Ic[1, 2] * zz
        n2 = Ic[2, 0] * zx + Ic[2, 1] * zy + Ic[2, 2] * zz
        for i in range(j + 1):
            gx = cc0 - p[i, 0]
            gy = cc1 - p[i, 1]
            gz = cc2 - p[i, 2]
            m0 = n0 + gy * fz - gz * fy
            m1 = n1 + gz * fx - gx * fz
            m2 = n2 + gx * fy - gy * fx
            val = z[i, 0] * m0 + z[i, 1] * m1 + z[i, 2] * m2
            M[i, j] = val
            M[j, i] = val


@njit(cache=True)
def _rnea_into(pk, ws, qd, qdd, gx, gy, gz, out):
    """Newton-Euler torques for the motion (frames + CoM must be filled).

    Gravity (gx, gy, gz) enters through a fictitious base acceleration.
    """
    n = pk.mass.shape[0]
    c, Iw, p, z = ws.c, ws.Iw, ws.p, ws.z
    w, wd, ao, ac = ws.w, ws.wd, ws.ao, ws.ac
    wp0 = wp1 = wp2 = 0.0
    wdp0 = wdp1 = wdp2 = 0.0
    ap0, ap1, ap2 = -gx, -gy, -gz
    pp0 = pp1 = pp2 = 0.0
    for i in range(n):
        r0 = p[i, 0] - pp0
        r1 = p[i, 1] - pp1
        r2 = p[i, 2] - pp2
        # a_o = a_parent + wd_p x r + w_p x (w_p x r)
        cx0 = wp1 * r2 - wp2 * r1
        cx1 = wp2 * r0 - wp0 * r2
        cx2 = wp0 * r1 - wp1 * r0
        ao[i, 0] = ap0 + (wdp1 * r2 - wdp2 * r1) + (wp1 * cx2 - wp2 * cx1)
        ao[i, 1] = ap1 + (wdp2 * r0 - wdp0 * r2) + (wp2 * cx0 - wp0 * cx2)
        ao[i, 2] = ap2 + (wdp0 * r1 - wdp1 * r0) + (wp0 * cx1 - wp1 * cx0)
        zq0 = z[i, 0] * qd[i]
        zq1 = z[i, 1] * qd[i]
        zq2 = z[i, 2] * qd[i]
        w[i, 0] = wp0 + zq0
        w[i, 1] = wp1 + zq1
        w[i, 2] = wp2 + zq2
        wd[i, 0] = wdp0 + z[i, 0] * qdd[i] + (wp1 * zq2 - wp2 * zq1)
        wd[i, 1] = wdp1 + z[i, 1] * qdd[i] + (wp2 * zq0 - wp0 * zq2)
        wd[i, 2] = wdp2 + z[i, 2] * qdd[i] + (wp0 * zq1 - wp1 * zq0)
        rc0 = c[i, 0] - p[i, 0]
        rc1 = c[i, 1] - p[i, 1]
        rc2 = c[i, 2] - p[i, 2]
        cy0 = w[i, 1] * rc2 - w[i, 2] * rc1
        cy1 = w[i, 2] * rc0 - w[i, 0] * rc2
        cy2 = w[i, 0] * rc1 - w[i, 1] * rc0
        ac[i, 0] = ao[i, 0] + (wd[i, 1] * rc2 - wd[i, 2] * rc1) + (w[i, 1] * cy2 - w[i, 2] * cy1)
        ac[i, 1] = ao[i, 1] + (wd[i, 2] * rc0 - wd[i, 0] * rc2) + (w[i, 2] * cy0 - w[i, 0] * cy2)
        ac[i, 2] = ao[i, 2] + (wd[i, 0] * rc1 - wd[i, 1] * rc0) + (w[i, 0] * cy1 - w[i, 1] * cy0)
        wp0, wp1, wp2 = w[i, 0], w[i, 1], w[i, 2]
        wdp0, wdp1, wdp2 = wd[i, 0], wd[i, 1], wd[i, 2]
        ap0, ap1, ap2 = ao[i, 0], ao[i, 1], ao[i, 2]
        pp0, pp1, pp2 = p[i, 0], p[i, 1], p[i, 2]
    fc0 = fc1 = fc2 = 0.0     # force from children
    nc0 = nc1 = nc2 = 0.0     # their moment about the child joint origin
    pc0 = pc1 = pc2 = 0.0
    for i in range(n - 1, -1, -1):
        mi = pk.mass[i]
        F0 = mi * ac[i, 0]
        F1 = mi * ac[i, 1]
        F2 = mi * ac[i, 2]
        # N = Iw wd + w x (Iw w)
        iw_w0 = Iw[i, 0, 0] * w[i, 0] + Iw[i, 0, 1] * w[i, 1] + Iw[i, 0, 2] * w[i, 2]
        iw_w1 = Iw[i, 1, 0] * w[i, 0] + Iw[i, 1, 1] * w[i, 1] + Iw[i, 1, 2] * w[i, 2]
        iw_w2 = Iw[i, 2, 0] * w[i, 0] + Iw[i, 2, 1] * w[i, 1] + Iw[i, 2, 2] * w[i, 2]
        N0 = Iw[i, 0, 0] * wd[i, 0] + Iw[i, 0, 1] * wd[i, 1] + Iw[i, 0, 2] * wd[i, 2] \
            + w[i, 1] * iw_w2 - w[i, 2] * iw_w1
        N1 = Iw[i, 1, 0] * wd[i, 0] + Iw[i, 1, 1] * wd[i, 1] + Iw[i, 1, 2] * wd[i, 2] \
            + w[i, 2] * iw_w0 - w[i, 0] * iw_w2
        N2 = Iw[i, 2, 0] * wd[i, 0] + Iw[i, 2, 1] * wd[i, 1] + Iw[i, 2, 2] * wd[i, 2] \
            + w[i, 0] * iw_w1 - w[i, 1] * iw_w0
        rc0 = c[i, 0] - p[i, 0]
        rc1 = c[i, 1] - p[i, 1]
        rc2 = c[i, 2] - p[i, 2]
        m0 = N0 + rc1 * F2 - rc2 * F1
        m1 = N1 + rc2 * F0 - rc0 * F2
        m2 = N2 + rc0 * F1 - rc1 * F0
        if i < n - 1:
            d0 = pc0 - p[i, 0]
            d1 = pc1 - p[i, 1]
            d2 = pc2 - p[i, 2]
            m0 += nc0 + d1 * fc2 - d2 * fc1
            m1 += nc1 + d2 * fc0 - d0 * fc2
            m2 += nc2 + d0 * fc1 - d1 * fc0
            F0 += fc0
            F1 += fc1
            F2 += fc2
        out[i] = z[i, 0] * m0 + z[i, 1] * m1 + z[i, 2] * m2
        fc0, fc1, fc2 = F0, F1, F2
        nc0, nc1, nc2 = m0, m1, m2
        pc0, pc1, pc2 = p[i, 0], p[i, 1], p[i, 2]


@njit(cache=True)
def _chol_into(A, L):
    """Lower Cholesky factor of SPD A into L. Raises on non-SPD input."""
    n = A.shape[0]
    for i in range(n):
        for j in range(i + 1):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if s <= 0.0:
                    raise np.linalg.LinAlgError("matrix not positive definite")
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
        for j in range(i + 1, n):
            L[i, j] = 0.0


@njit(cache=True)
def _chol_solve_into(L, b, tmp, x):
    n = L.shape[0]
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * tmp[k]
        tmp[i] = s / L[i, i]
    for i in range(n - 1, -1, -1):
        s = tmp[i]
        for k in range(i + 1, n):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]


@njit(cache=True)
def _lam_into(ws, eps):
    """Operational-space inertia (J M^-1 J^T + eps I)^-1 into ws.lam.

    Requires ws.M factored into ws.L and ws.J filled.
    """
    n = ws.M.shape[0]
    J, L, X = ws.J, ws.L, ws.X
    # X = M^-1 J^T, column by column
    for col in range(6):
        for i in range(n):
            ws.tmp_n[i] = J[col, i]
        _chol_solve_into(L, ws.tmp_n, ws.tmp_n2, ws.tmp_n)
        for i in range(n):
            X[i, col] = ws.tmp_n[i]
    A = ws.A66
    for i in range(6):
        for j in range(6):
            s = 0.0
            for m in range(n):
                s += J[i, m] * X[m, j]
            A[i, j] = s
        A[i, i] += eps
    _chol_into(A, ws.L66)
    # lam = A^-1 by solving against the identity
    for col in range(6):
        for i in range(6):
            ws.t6a[i] = 1.0 if i == col else 0.0
        _chol_solve_into(ws.L66, ws.t6a, ws.t6b, ws.t6c)
        for i in range(6):
            ws.lam[i, col] = ws.t6c[i]
    for i in range(6):
        for j in range(i):
            s = 0.5 * (ws.lam[i, j] + ws.lam[j, i])
            ws.lam[i, j] = s
            ws.lam[j, i] = s


@njit(cache=True)
def _dyn_caches_into(pk, q, qd, ws, need_lam, eps):
    """Fill every dynamics cache for (q, qd): frames, J, M (+ its Cholesky
    factor), bias, gravity torque, twist, and optionally the task inertia."""
    _fk_into(pk, q, ws)
    _jac_into(ws)
    _com_inertia_into(pk, ws)
    _crba_into(pk, ws)
    _rnea_into(pk, ws, qd, ws.zero_n, pk.gravity[0], pk.gravity[1], pk.gravity[2], ws.bias)
    _rnea_into(pk, ws, ws.zero_n, ws.zero_n, pk.gravity[0], pk.gravity[1], pk.gravity[2],
               ws.grav)
    _chol_into(ws.M, ws.L)
    if need_lam:
        _lam_into(ws, eps)
    n = q.shape[0]
    for k in range(6):
        s = 0.0
        for i in range(n):
            s += ws.J[k, i] * qd[i]
        ws.tw[k] = s


# ---------------------------------------------------------------------------
# allocating kernel fronts (cold paths and tests)


@njit(cache=True)
def _fk_chain(pk, q):
    ws = _make_ws(pk.mass.shape[0])
    _fk_into(pk, q, ws)
    return ws.R, ws.p, ws.z, ws.Ree, ws.pee


@njit(cache=True)
def _jacobian_from_frames(z, p, p_ee):
    n = z.shape[0]
    J = np.empty((6, n))
    for i in range(n):
        lin = _cross(z[i], p_ee - p[i])
        J[0, i] = lin[0]
        J[1, i] = lin[1]
        J[2, i] = lin[2]
        J[3, i] = z[i, 0]
        J[4, i] = z[i, 1]
        J[5, i] = z[i, 2]
    return J


@njit(cache=True)
def _crba(pk, q):
    ws = _make_ws(pk.mass.shape[0])
    _fk_into(pk, q, ws)
    _com_inertia_into(pk, ws)
    _crba_into(pk, ws)
    return ws.M


@njit(cache=True)
def _rnea(pk, q, qd, qdd, gravity):
    ws = _make_ws(pk.mass.shape[0])
    _fk_into(pk, q, ws)
    _com_inertia_into(pk, ws)
    out = np.empty(pk.mass.shape[0])
    _rnea_into(pk, ws, qd, qdd, gravity[0], gravity[1], gravity[2], out)
    return out


@njit(cache=True)
def _forward_dynamics(pk, q, qd, tau, f_ext, gravity):
    ws = _make_ws(pk.mass.shape[0])
    _fk_into(pk, q, ws)
    _jac_into(ws)
    _com_inertia_into(pk, ws)
    _crba_into(pk, ws)
    _rnea_into(pk, ws, qd, ws.zero_n, gravity[0], gravity[1], gravity[2], ws.bias)
    rhs = tau - ws.bias
    if f_ext[0] != 0.0 or f_ext[1] != 0.0 or f_ext[2] != 0.0 or \
       f_ext[3] != 0.0 or f_ext[4] != 0.0 or f_ext[5] != 0.0:
        rhs = rhs + _jtv(ws.J, f_ext)
    _chol_into(ws.M, ws.L)
    _chol_solve_into(ws.L, rhs, ws.tmp_n, ws.qdd)
    return ws.qdd


@njit(cache=True)
def _task_inertia(M, J, eps):
    """Regularized operational-space inertia from explicit M and J."""
    n = M.shape[0]
    ws = _make_ws(n)
    for i in range(n):
        for j in range(n):
            ws.M[i, j] = M[i, j]
    for i in range(6):
        for j in range(n):
            ws.J[i, j] = J[i, j]
    _chol_into(ws.M, ws.L)
    _lam_into(ws, eps)
    return ws.lam


# ---------------------------------------------------------------------------
# Public ndarray API


@dataclass(frozen=True)
class OpSpaceInertia:
    """Task-space inertia with the regularization actually applied."""

    lam: np.ndarray
    eps: float


def forward_kinematics(model: RobotModel, q: np.ndarray) -> tuple[Pose, list[Pose]]:
    """End-effector pose and per-link frames (joint origin + link rotation)."""
    q = model.check_q(q)
    R, p, z, R_ee, p_ee = _fk_chain(model.packed(), q)
    links = [Pose(R[i].copy(), p[i].copy()) for i in range(model.dof)]
    return Pose(R_ee, p_ee), links


def geometric_jacobian(model: RobotModel, q: np.ndarray) -> np.ndarray:
    """6xn Jacobian: rows 0-2 linear, rows 3-5 angular, world frame."""
    q = model.check_q(q)
    R, p, z, R_ee, p_ee = _fk_chain(model.packed(), q)
    return _jacobian_from_frames(z, p, p_ee)


def mass_matrix(model: RobotModel, q: np.ndarray) -> np.ndarray:
    q = model.check_q(q)
    return _crba(model.packed(), q).copy()


def inverse_dynamics(model: RobotModel, q, qd, qdd, gravity=None) -> np.ndarray:
    q = model.check_q(q)
    qd = model.check_q(qd)
    qdd = model.check_q(qdd)
    g = model.gravity if gravity is None else np.asarray(gravity, dtype=np.float64)
    return _rnea(model.packed(), q, qd, qdd, g)


def bias_forces(model: RobotModel, q, qd, gravity=None) -> np.ndarray:
    """Coriolis/centrifugal plus gravity torques: inverse dynamics at qdd=0."""
    return inverse_dynamics(model, q, qd, np.zeros(model.dof), gravity)


def gravity_torque(model: RobotModel, q) -> np.ndarray:
    return inverse_dynamics(model, q, np.zeros(model.dof), np.zeros(model.dof))


def forward_dynamics(model: RobotModel, q, qd, tau, f_ext=None, gravity=None) -> np.ndarray:
    """qdd = M^-1 (tau + J^T f_ext - bias), solved via Cholesky."""
    q = model.check_q(q)
    qd = model.check_q(qd)
    tau = model.check_q(tau)
    g = model.gravity if gravity is None else np.asarray(gravity, dtype=np.float64)
    w = np.zeros(6) if f_ext is None else np.asarray(f_ext, dtype=np.float64).reshape(6)
    try:
        return _forward_dynamics(model.packed(), q, qd, tau, w, g).copy()
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"mass matrix not positive definite for {model.name}") from exc


def op_space_inertia(model: RobotModel, q, eps: float = LAMBDA_EPS_DEFAULT,
                     rows: np.ndarray | None = None) -> OpSpaceInertia:
    """Operational-space inertia, optionally restricted to a task-row subset."""
    if eps < 0.0:
        raise ValueError("regularization eps must be >= 0")
    q = model.check_q(q)
    M = mass_matrix(model, q)
    J = geometric_jacobian(model, q)
    if rows is not None:
        J = J[np.asarray(rows, dtype=np.intp)]
        # the reduced task reuses the dense route below
        L = np.linalg.cholesky(M)
        X = np.linalg.solve(M, J.T)
        A = J @ X + eps * np.eye(J.shape[0])
        lam = np.linalg.solve(A, np.eye(J.shape[0]))
        lam = 0.5 * (lam + lam.T)
        return OpSpaceInertia(lam=lam, eps=eps)
    lam = _task_inertia(M, np.ascontiguousarray(J), eps)
    return OpSpaceInertia(lam=lam.copy(), eps=eps)


def rotation_error(R_des: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Axis-angle vector of R_des R^T; zero iff the rotations coincide."""
    R_des = np.asarray(R_des, dtype=np.float64).reshape(3, 3)
    R = np.asarray(R, dtype=np.float64).reshape(3, 3)
    return _matrix_to_rotvec(np.ascontiguousarray(R_des @ R.T))


def rotvec_to_matrix(v: np.ndarray) -> np.ndarray:
    return _rotvec_to_matrix(np.asarray(v, dtype=np.float64).reshape(3))


def matrix_to_rotvec(R: np.ndarray) -> np.ndarray:
    return _matrix_to_rotvec(np.ascontiguousarray(np.asarray(R, dtype=np.float64).reshape(3, 3)))


def kinetic_energy(model: RobotModel, q, qd) -> float:
    qd = model.check_q(qd)
    return 0.5 * float(qd @ mass_matrix(model, q) @ qd)
