"""Scene mechanics and physics stepping.

Three scene flavors share one stepper: free space, a friction-loaded door
hinge pin-coupled to the gripper, and a soft tool-table contact with
regularized Coulomb friction plus a wipeable stain grid.  Integration is
semi-implicit Euler at the inner control period; joint positions clamp at
their limits (velocity zeroed, flag raised), and the door hinge clamps to
its range the same way.
"""

from __future__ import annotations

import collections
import enum
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .model import Pose, RobotModel
from .spatial import (
    _chol_into,
    _chol_solve_into,
    _com_inertia_into,
    _crba_into,
    _fk_into,
    _jac_into,
    _make_ws,
    _mv3,
    _rnea_into,
    make_workspace,
)


class SceneKind(enum.IntEnum):
    FREE_SPACE = 0
    DOOR = 1
    TABLE = 2


class SimulationError(RuntimeError):
    """Raised when the stepper produces a non-finite state."""


@dataclass(frozen=True)
class ContactParams:
    """Penalty contact of the soft tool tip against the table plane."""

    stiffness: float = 10_000.0      # N/m of penetration
    damping: float = 50.0            # N s/m while approaching
    mu: float = 0.5                  # Coulomb friction coefficient
    v_reg: float = 0.01              # tangential regularization velocity, m/s
    plane_height: float = 0.20      # table surface z, m

    def __post_init__(self):
        if self.stiffness <= 0.0 or self.v_reg <= 0.0:
            raise ValueError("contact stiffness and v_reg must be positive")
        if self.mu < 0.0:
            raise ValueError("friction coefficient must be non-negative")


@dataclass(frozen=True)
class DoorParams:
    """One-DoF door: vertical hinge, dry+viscous friction, caged handle."""

    hinge_pos: np.ndarray = (0.10, 0.0, 0.40)
    hinge_axis: np.ndarray = (0.0, 0.0, 1.0)
    handle_door: np.ndarray = (0.35, 0.0, 0.0)   # handle point, door frame
    inertia: float = 0.5             # kg m^2 about the hinge
    dry_friction: float = 1.0        # N m
    viscous: float = 0.5             # N m s/rad
    coupling_k: float = 400.0        # gripper-cage spring, N/m
    coupling_c: float = 20.0         # N s/m
    theta_max: float = np.pi / 2
    vel_reg: float = 0.01            # sliding-sign regularization, rad/s
    stick_eps: float = 1e-3          # |thetadot| below this counts as stuck

    def __post_init__(self):
        for name in ("hinge_pos", "hinge_axis", "handle_door"):
            v = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=np.float64))
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        if self.inertia <= 0.0:
            raise ValueError("door inertia must be positive")
        if self.dry_friction < 0.0:
            raise ValueError("dry friction torque must be non-negative")

    def handle_world(self, theta: float) -> np.ndarray:
        from .spatial import rotvec_to_matrix
        return self.hinge_pos + rotvec_to_matrix(self.hinge_axis * theta) @ self.handle_door


@dataclass(frozen=True)
class ToolGeometry:
    """Wiping tool: contact point offset from the ee frame and footprint."""

    offset: np.ndarray = (0.0, 0.0, 0.12)   # tool tip in the ee frame, m
    radius: float = 0.05                     # wiping footprint radius, m

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.offset, dtype=np.float64))
        v.setflags(write=False)
        object.__setattr__(self, "offset", v)
        if self.radius <= 0.0:
            raise ValueError("footprint radius must be positive")


@dataclass(frozen=True)
class SceneParams:
    """Everything the stepper needs besides the robot model."""

    scene: SceneKind = SceneKind.FREE_SPACE
    contact: ContactParams = field(default_factory=ContactParams)
    door: DoorParams = field(default_factory=DoorParams)
    tool: ToolGeometry = field(default_factory=ToolGeometry)
    collision_plane_z: float | None = None   # bad-collision plane for non-tool links
    dt: float = 2e-3


@dataclass
class WorldState:
    """Mutable simulation state owned by exactly one stepper."""

    q: np.ndarray
    qd: np.ndarray
    door_angle: float = 0.0
    door_vel: float = 0.0
    wiped: np.ndarray = None          # bool flags per stain element
    t: float = 0.0

    def __post_init__(self):
        self.q = np.ascontiguousarray(np.asarray(self.q, dtype=np.float64))
        self.qd = np.ascontiguousarray(np.asarray(self.qd, dtype=np.float64))
        if self.wiped is None:
            self.wiped = np.zeros(0, dtype=np.uint8)
        else:
            self.wiped = np.ascontiguousarray(np.asarray(self.wiped, dtype=np.uint8))

    def copy(self) -> "WorldState":
        return WorldState(q=self.q.copy(), qd=self.qd.copy(),
                          door_angle=self.door_angle, door_vel=self.door_vel,
                          wiped=self.wiped.copy(), t=self.t)


StepInfo = collections.namedtuple(
    "StepInfo",
    ["contact", "force_norm", "newly_wiped", "limit_hit", "collision"],
)


# ---------------------------------------------------------------------------
# kernels


@njit(cache=True)
def _contact_force(p_tool, v_tool, stiffness, damping, mu, v_reg, plane_h):
    """Force on the tool from the table; zero vector when separated."""
    F = np.zeros(3)
    pen = plane_h - p_tool[2]
    if pen <= 0.0:
        return F, False
    normal = stiffness * pen
    if v_tool[2] < 0.0:
        normal -= damping * v_tool[2]
    if normal < 0.0:
        normal = 0.0
    F[2] = normal
    vt = np.sqrt(v_tool[0] * v_tool[0] + v_tool[1] * v_tool[1])
    if vt > 1e-12:
        scale = -mu * normal * np.tanh(vt / v_reg) / vt
        F[0] = scale * v_tool[0]
        F[1] = scale * v_tool[1]
    return F, True


@njit(cache=True)
def _door_step(theta, theta_d, ee_p, ee_v, hinge, axis, handle_door,
               inertia, dry, viscous, k_c, c_c, theta_max, vel_reg, stick_eps, dt):
    """Advance the hinge one step; returns (theta, theta_d, F_on_gripper, tau_hinge)."""
    # handle point and velocity in world frame
    ca = np.cos(theta)
    sa = np.sin(theta)
    # rotation of handle_door about the (unit, vertical by default) hinge axis
    ax, ay, az = axis[0], axis[1], axis[2]
    h = np.empty(3)
    # Rodrigues rotation of handle_door by theta about axis
    kxh = np.empty(3)
    kxh[0] = ay * handle_door[2] - az * handle_door[1]
    kxh[1] = az * handle_door[0] - ax * handle_door[2]
    kxh[2] = ax * handle_door[1] - ay * handle_door[0]
    kdh = ax * handle_door[0] + ay * handle_door[1] + az * handle_door[2]
    for i in range(3):
        h[i] = hinge[i] + handle_door[i] * ca + kxh[i] * sa + axis[i] * kdh * (1.0 - ca)
    r = h - hinge
    v_h = np.empty(3)
    v_h[0] = theta_d * (ay * r[2] - az * r[1])
    v_h[1] = theta_d * (az * r[0] - ax * r[2])
    v_h[2] = theta_d * (ax * r[1] - ay * r[0])
    F_grip = k_c * (h - ee_p) + c_c * (v_h - ee_v)
    F_door = -F_grip
    rxf = np.empty(3)
    rxf[0] = r[1] * F_door[2] - r[2] * F_door[1]
    rxf[1] = r[2] * F_door[0] - r[0] * F_door[2]
    rxf[2] = r[0] * F_door[1] - r[1] * F_door[0]
    tau_ext = rxf[0] * ax + rxf[1] * ay + rxf[2] * az
    if abs(theta_d) < stick_eps and abs(tau_ext) <= dry:
        # static friction holds the door
        return theta, 0.0, F_grip, tau_ext
    tau_net = tau_ext - viscous * theta_d - dry * np.tanh(theta_d / vel_reg)
    theta_d = theta_d + dt * tau_net / inertia
    theta = theta + dt * theta_d
    if theta < 0.0:
        theta = 0.0
        if theta_d < 0.0:
            theta_d = 0.0
    elif theta > theta_max:
        theta = theta_max
        if theta_d > 0.0:
            theta_d = 0.0
    return theta, theta_d, F_grip, tau_ext


@njit(cache=True)
def _wipe_kernel(tool_x, tool_y, centers, wiped, radius):
    """Flip unwiped elements within the footprint; returns the newly wiped count."""
    count = 0
    r2 = radius * radius
    for k in range(centers.shape[0]):
        if wiped[k] == 0:
            dx = centers[k, 0] - tool_x
            dy = centers[k, 1] - tool_y
            if dx * dx + dy * dy <= r2:
                wiped[k] = 1
                count += 1
    return count


@njit(cache=True)
def _integrate_joints(pk, q, qd, qdd, dt):
    """Semi-implicit Euler with joint-limit clamping; returns limit flag."""
    n = q.shape[0]
    limit = False
    for i in range(n):
        qd[i] = qd[i] + dt * qdd[i]
        q[i] = q[i] + dt * qd[i]
        if q[i] < pk.q_min[i]:
            q[i] = pk.q_min[i]
            if qd[i] < 0.0:
                qd[i] = 0.0
            limit = True
        elif q[i] > pk.q_max[i]:
            q[i] = pk.q_max[i]
            if qd[i] > 0.0:
                qd[i] = 0.0
            limit = True
    return limit


@njit(cache=True)
def _collision_check(p_frames, radii, plane_z):
    """Spherical link proxies against a horizontal plane; the base link and
    the ee (tool mount) are exempt."""
    n = p_frames.shape[0]
    for i in range(1, n):
        if p_frames[i, 2] - radii[i] < plane_z:
            return True
    return False


@njit(cache=True)
def _physics_substep(pk, ws, q, qd, u, scene, wiped, centers,
                     door_state, c_stiff, c_damp, c_mu, c_vreg, c_plane,
                     tool_off, tool_radius,
                     d_hinge, d_axis, d_handle, d_inertia, d_dry, d_visc,
                     d_ck, d_cc, d_tmax, d_vreg, d_stick,
                     collision_plane, dt):
    """One 2 ms step: external wrench, forward dynamics, integration, scene
    updates.  Mutates q, qd, wiped, door_state (and the workspace).  Returns
    (contact, force_norm, newly_wiped, limit, collision)."""
    n = q.shape[0]
    _fk_into(pk, q, ws)
    _jac_into(ws)
    _com_inertia_into(pk, ws)
    _crba_into(pk, ws)
    _rnea_into(pk, ws, qd, ws.zero_n, pk.gravity[0], pk.gravity[1], pk.gravity[2], ws.bias)
    for k in range(6):
        sacc = 0.0
        for i in range(n):
            sacc += ws.J[k, i] * qd[i]
        ws.tw[k] = sacc
    for k in range(6):
        ws.wrench[k] = 0.0
    contact = False
    force_norm = 0.0
    newly = 0
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
        F, contact = _contact_force(tool_p, v_tool, c_stiff, c_damp, c_mu, c_vreg, c_plane)
        ws.wrench[0] = F[0]
        ws.wrench[1] = F[1]
        ws.wrench[2] = F[2]
        ws.wrench[3] = ay * F[2] - az * F[1]
        ws.wrench[4] = az * F[0] - ax * F[2]
        ws.wrench[5] = ax * F[1] - ay * F[0]
        force_norm = np.sqrt(F[0] * F[0] + F[1] * F[1] + F[2] * F[2])
    elif scene == 1:
        theta, theta_d, F_grip, _ = _door_step(
            door_state[0], door_state[1], ws.pee, ws.tw[:3], d_hinge, d_axis, d_handle,
            d_inertia, d_dry, d_visc, d_ck, d_cc, d_tmax, d_vreg, d_stick, dt)
        door_state[0] = theta
        door_state[1] = theta_d
        ws.wrench[0] = F_grip[0]
        ws.wrench[1] = F_grip[1]
        ws.wrench[2] = F_grip[2]
        force_norm = np.sqrt(F_grip[0] ** 2 + F_grip[1] ** 2 + F_grip[2] ** 2)
    for i in range(n):
        jtw = 0.0
        for k in range(6):
            jtw += ws.J[k, i] * ws.wrench[k]
        ws.tmp_n2[i] = u[i] + jtw - ws.bias[i]
    _chol_into(ws.M, ws.L)
    _chol_solve_into(ws.L, ws.tmp_n2, ws.tmp_n, ws.qdd)
    limit = _integrate_joints(pk, q, qd, ws.qdd, dt)
    collision = False
    if not np.isnan(collision_plane):
        collision = _collision_check(ws.p, pk.link_radius, collision_plane)
    if scene == 2 and contact:
        newly = _wipe_kernel(tool_x, tool_y, centers, wiped, tool_radius)
    return contact, force_norm, newly, limit, collision


def _scene_args(params: SceneParams):
    c = params.contact
    d = params.door
    plane = np.nan if params.collision_plane_z is None else float(params.collision_plane_z)
    return (
        int(params.scene), c.stiffness, c.damping, c.mu, c.v_reg, c.plane_height,
        params.tool.offset, params.tool.radius,
        d.hinge_pos, d.hinge_axis, d.handle_door, d.inertia, d.dry_friction,
        d.viscous, d.coupling_k, d.coupling_c, d.theta_max, d.vel_reg, d.stick_eps,
        plane,
    )


# ---------------------------------------------------------------------------
# public operations


def tool_table_wrench(tool_pose: Pose, tool_vel: np.ndarray, params: ContactParams,
                      ee_pos: np.ndarray | None = None) -> tuple[np.ndarray, bool]:
    """6-wrench at the ee frame from tool-table contact, plus the contact flag.

    With `ee_pos` omitted the moment arm is zero (wrench acts at the tool
    point itself).
    """
    v = np.asarray(tool_vel, dtype=np.float64).reshape(3)
    F, contact = _contact_force(tool_pose.p, v, params.stiffness, params.damping,
                                params.mu, params.v_reg, params.plane_height)
    arm = np.zeros(3) if ee_pos is None else tool_pose.p - np.asarray(ee_pos, float)
    return np.concatenate([F, np.cross(arm, F)]), bool(contact)


def door_dynamics_step(ee_pos, ee_vel, door_angle: float, door_vel: float,
                       params: DoorParams, dt: float):
    """Advance the hinge one step under the gripper-cage coupling.

    Returns (hinge torque from the coupling, 6-wrench on the ee, new angle,
    new angular velocity).
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    ee_pos = np.asarray(ee_pos, dtype=np.float64).reshape(3)
    ee_vel = np.asarray(ee_vel, dtype=np.float64).reshape(3)
    theta, theta_d, F_grip, tau = _door_step(
        float(door_angle), float(door_vel), ee_pos, ee_vel,
        params.hinge_pos, params.hinge_axis, params.handle_door,
        params.inertia, params.dry_friction, params.viscous,
        params.coupling_k, params.coupling_c, params.theta_max,
        params.vel_reg, params.stick_eps, float(dt))
    return float(tau), np.concatenate([F_grip, np.zeros(3)]), float(theta), float(theta_d)


def wipe_update(tool_pos, contact: bool, centers: np.ndarray, wiped: np.ndarray,
                radius: float) -> tuple[np.ndarray, int]:
    """Flip unwiped elements under the footprint; no contact, no change."""
    new = np.ascontiguousarray(np.asarray(wiped, dtype=np.uint8)).copy()
    if not contact:
        return new, 0
    tool_pos = np.asarray(tool_pos, dtype=np.float64)
    count = _wipe_kernel(float(tool_pos[0]), float(tool_pos[1]),
                         np.ascontiguousarray(np.asarray(centers, dtype=np.float64)),
                         new, float(radius))
    return new, int(count)


def step_physics(model: RobotModel, state: WorldState, u: np.ndarray,
                 params: SceneParams, centers: np.ndarray | None = None) -> StepInfo:
    """Advance the world by one inner step under torque u (mutates state)."""
    u = model.check_q(u)
    pk = model.packed()
    door_state = np.array([state.door_angle, state.door_vel])
    if centers is None:
        centers = np.zeros((0, 2))
    args = _scene_args(params)
    ws = make_workspace(model.dof)
    out = _physics_substep(pk, ws, state.q, state.qd, u, args[0],
                           state.wiped, np.ascontiguousarray(np.asarray(centers, float)),
                           door_state, *args[1:], params.dt)
    contact, force_norm, newly, limit, collision = out
    state.door_angle = float(door_state[0])
    state.door_vel = float(door_state[1])
    state.t += params.dt
    _check_finite(state)
    return StepInfo(contact=bool(contact), force_norm=float(force_norm),
                    newly_wiped=int(newly), limit_hit=bool(limit),
                    collision=bool(collision))


def _check_finite(state: WorldState) -> None:
    for name in ("q", "qd"):
        arr = getattr(state, name)
        bad = np.flatnonzero(~np.isfinite(arr))
        if bad.size:
            raise SimulationError(f"{name}[{bad[0]}] became non-finite at t={state.t:.4f}")
    for name in ("door_angle", "door_vel"):
        if not np.isfinite(getattr(state, name)):
            raise SimulationError(f"{name} became non-finite at t={state.t:.4f}")
