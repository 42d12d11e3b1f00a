"""Fused policy-tick simulation loop.

One jitted call advances a whole policy tick: for each control substep it
rebuilds the dynamics caches, interpolates the setpoint, dispatches the
controller, applies scene wrenches, and integrates.  It reuses exactly the
kernels behind the module-level operations in spatial/controllers/world
through a persistent workspace, so a tick is numerically interchangeable
with the hand-composed path; it exists because training steps physics tens
of millions of times.
"""

from __future__ import annotations

import collections

import numpy as np
from numba import njit

from .controllers import ControllerConfig, SetpointArrays, _interp_into, _torque_into
from .model import RobotModel
from .spatial import (
    _chol_solve_into,
    _dyn_caches_into,
    _fk_into,
    _jac_into,
    _make_ws,
    _mv3,
    make_workspace,
)
from .world import (
    SceneParams,
    WorldState,
    _collision_check,
    _contact_force,
    _door_step,
    _integrate_joints,
    _scene_args,
    _wipe_kernel,
)

TickResult = collections.namedtuple(
    "TickResult",
    ["energy", "contact_substeps", "force_sum", "force_max",
     "newly_wiped", "limit_hit", "collision"],
)


@njit(cache=True)
def _tick_kernel(pk, cc, ws, prev, nxt, q, qd, door_state, wiped, centers,
                 scene, c_stiff, c_damp, c_mu, c_vreg, c_plane,
                 tool_off, tool_radius,
                 d_hinge, d_axis, d_handle, d_inertia, d_dry, d_visc,
                 d_ck, d_cc, d_tmax, d_vreg, d_stick,
                 collision_plane, dt):
    n = q.shape[0]
    substeps = cc.substeps
    need_lam = cc.kind >= 4
    energy = 0.0
    contact_n = 0
    f_sum = 0.0
    f_max = 0.0
    newly = 0
    limit = False
    collision = False
    for s in range(substeps):
        _dyn_caches_into(pk, q, qd, ws, need_lam, cc.lambda_eps)

        for k in range(6):
            ws.wrench[k] = 0.0
        contact = False
        fn = 0.0
        tool_x = 0.0
        tool_y = 0.0
        if scene == 2:
            tool_p = ws.pee + _mv3(ws.Ree, tool_off)
            tool_x, tool_y = tool_p[0], tool_p[1]
            ax = tool_p[0] - ws.pee[0]
            ay = tool_p[1] - ws.pee[1]
            az = tool_p[2] - ws.pee[2]
            v_tool = np.empty(3)
            v_tool[0] = ws.tw[0] + ws.tw[4] * az - ws.tw[5] * ay
            v_tool[1] = ws.tw[1] + ws.tw[5] * ax - ws.tw[3] * az
            v_tool[2] = ws.tw[2] + ws.tw[3] * ay - ws.tw[4] * ax
            F, contact = _contact_force(tool_p, v_tool, c_stiff, c_damp,
                                        c_mu, c_vreg, c_plane)
            ws.wrench[0] = F[0]
            ws.wrench[1] = F[1]
            ws.wrench[2] = F[2]
            ws.wrench[3] = ay * F[2] - az * F[1]
            ws.wrench[4] = az * F[0] - ax * F[2]
            ws.wrench[5] = ax * F[1] - ay * F[0]
            fn = np.sqrt(F[0] * F[0] + F[1] * F[1] + F[2] * F[2])
        elif scene == 1:
            theta, theta_d, F_grip, _ = _door_step(
                door_state[0], door_state[1], ws.pee, ws.tw[:3], d_hinge, d_axis,
                d_handle, d_inertia, d_dry, d_visc, d_ck, d_cc, d_tmax,
                d_vreg, d_stick, dt)
            door_state[0] = theta
            door_state[1] = theta_d
            ws.wrench[0] = F_grip[0]
            ws.wrench[1] = F_grip[1]
            ws.wrench[2] = F_grip[2]
            fn = np.sqrt(F_grip[0] ** 2 + F_grip[1] ** 2 + F_grip[2] ** 2)

        frac = (s + 1.0) / substeps
        _interp_into(prev, nxt, frac, ws.sp_joint, ws.sp_jkp, ws.sp_jkv,
                     ws.sp_pos, ws.sp_rot, ws.sp_tkp, ws.sp_tkv)
        _torque_into(pk, cc, ws.sp_joint, ws.sp_jkp, ws.sp_jkv, ws.sp_pos,
                     ws.sp_rot, ws.sp_tkp, ws.sp_tkv, q, qd, ws.pee, ws.Ree,
                     ws.tw, ws.M, ws.lam, ws.J, ws.grav, ws.u)
        for i in range(n):
            energy += abs(ws.u[i]) * dt

        for i in range(n):
            jtw = 0.0
            for k in range(6):
                jtw += ws.J[k, i] * ws.wrench[k]
            ws.tmp_n2[i] = ws.u[i] + jtw - ws.bias[i]
        _chol_solve_into(ws.L, ws.tmp_n2, ws.tmp_n, ws.qdd)
        if _integrate_joints(pk, q, qd, ws.qdd, dt):
            limit = True
        if not np.isnan(collision_plane):
            if _collision_check(ws.p, pk.link_radius, collision_plane):
                collision = True
        if scene == 2:
            if contact:
                newly += _wipe_kernel(tool_x, tool_y, centers, wiped, tool_radius)
                contact_n += 1
                f_sum += fn
                if fn > f_max:
                    f_max = fn
        elif scene == 1:
            contact_n += 1
            f_sum += fn
            if fn > f_max:
                f_max = fn
    return energy, contact_n, f_sum, f_max, newly, limit, collision


@njit(cache=True)
def _ee_state_kernel(pk, q, qd):
    ws = _make_ws(pk.mass.shape[0])
    _fk_into(pk, q, ws)
    _jac_into(ws)
    n = q.shape[0]
    for k in range(6):
        s = 0.0
        for i in range(n):
            s += ws.J[k, i] * qd[i]
        ws.tw[k] = s
    return ws.Ree, ws.pee, ws.tw


def ee_state(model: RobotModel, q, qd):
    """(rotation, position, 6-twist) of the end-effector."""
    return _ee_state_kernel(model.packed(),
                            np.ascontiguousarray(np.asarray(q, dtype=np.float64)),
                            np.ascontiguousarray(np.asarray(qd, dtype=np.float64)))


class TickSimulator:
    """Owns one WorldState's stepping and a persistent kernel workspace.

    One simulator drives one environment instance; never share across
    workers.
    """

    def __init__(self, model: RobotModel, control: ControllerConfig,
                 scene: SceneParams, centers: np.ndarray | None = None):
        self.model = model
        self.control = control
        self.scene = scene
        self.pk = model.packed()
        self.cc = control.packed(model)
        self.ws = make_workspace(model.dof)
        self.centers = np.ascontiguousarray(
            np.zeros((0, 2)) if centers is None else np.asarray(centers, dtype=np.float64))
        self._args = _scene_args(scene)

    def run_tick(self, state: WorldState, prev: SetpointArrays,
                 nxt: SetpointArrays) -> TickResult:
        door_state = np.array([state.door_angle, state.door_vel])
        out = _tick_kernel(self.pk, self.cc, self.ws, prev, nxt, state.q, state.qd,
                           door_state, state.wiped, self.centers,
                           self._args[0], *self._args[1:], self.scene.dt)
        state.door_angle = float(door_state[0])
        state.door_vel = float(door_state[1])
        state.t += self.scene.dt * self.control.substeps
        return TickResult(*out)
