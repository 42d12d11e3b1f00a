"""Action-space controllers: eight policy-action interfaces to joint torques.

A policy emits a raw action in [-1, 1]^d at the low (policy) rate; the
controller decodes it into an absolute setpoint, interpolates linearly from
the previous tick's setpoint across the control substeps, and converts each
interpolated setpoint into clamped joint torques at the high (torque) rate.
Joint-space laws close the loop on q/qd; task-space laws convert an
impedance wrench through the regularized operational-space inertia and the
Jacobian transpose.  Gravity is compensated at the joint level for every
kind except raw torque.
"""

from __future__ import annotations

import collections
import enum
from dataclasses import dataclass

import numpy as np
from numba import njit

from .model import Pose, RobotModel, Twist
from .spatial import (
    LAMBDA_EPS_DEFAULT,
    _dyn_caches_into,
    _make_ws,
    _matrix_to_rotvec,
    _mm33,
    _mm33_nt,
    _rotvec_to_matrix,
)


class ActionSpaceKind(enum.IntEnum):
    JOINT_TORQUE = 0
    JOINT_VELOCITY = 1
    JOINT_POSITION = 2
    JOINT_VAR_IMPEDANCE = 3
    EE_IMPEDANCE_LOW = 4
    EE_IMPEDANCE_MEDIUM = 5
    EE_IMPEDANCE_HIGH = 6
    EE_VAR_IMPEDANCE = 7

    @property
    def task_space(self) -> bool:
        return self >= ActionSpaceKind.EE_IMPEDANCE_LOW

    @property
    def variable_gains(self) -> bool:
        return self in (ActionSpaceKind.JOINT_VAR_IMPEDANCE, ActionSpaceKind.EE_VAR_IMPEDANCE)

    def action_dim(self, dof: int, critically_damped: bool = False) -> int:
        if self == ActionSpaceKind.JOINT_VAR_IMPEDANCE:
            return 2 * dof if critically_damped else 3 * dof
        if self == ActionSpaceKind.EE_VAR_IMPEDANCE:
            return 12 if critically_damped else 18
        if self.task_space:
            return 6
        return dof

    @classmethod
    def from_name(cls, name: str) -> "ActionSpaceKind":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            valid = ", ".join(k.name.lower() for k in cls)
            raise ValueError(f"unknown action space {name!r}; expected one of {valid}")


# Fixed task-space impedance presets: (kp_pos, kp_ori), critically damped.
EE_PRESETS = {
    ActionSpaceKind.EE_IMPEDANCE_LOW: (25.0, 10.0),
    ActionSpaceKind.EE_IMPEDANCE_MEDIUM: (150.0, 50.0),
    ActionSpaceKind.EE_IMPEDANCE_HIGH: (500.0, 150.0),
}


@dataclass(frozen=True)
class GainSet:
    """Proportional/derivative gain vectors (length n joint-space, 6 task-space)."""

    kp: np.ndarray
    kv: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "kp", np.asarray(self.kp, dtype=np.float64))
        object.__setattr__(self, "kv", np.asarray(self.kv, dtype=np.float64))
        if self.kp.shape != self.kv.shape:
            raise ValueError("kp and kv must have matching shapes")
        if np.any(self.kp < 0.0) or np.any(self.kv < 0.0):
            raise ValueError("gains must be non-negative")


PackedControl = collections.namedtuple(
    "PackedControl",
    [
        "kind", "substeps", "gravity_comp", "critically_damped", "lambda_eps",
        "dq_max", "dp_max", "dr_max",
        "joint_kp_lo", "joint_kp_hi", "joint_kv_lo", "joint_kv_hi",
        "kp_pos_lo", "kp_pos_hi", "kp_ori_lo", "kp_ori_hi",
        "kv_pos_lo", "kv_pos_hi", "kv_ori_lo", "kv_ori_hi",
        "fixed_joint_kp", "fixed_joint_kv", "fixed_task_kp", "fixed_task_kv",
    ],
)

SetpointArrays = collections.namedtuple(
    "SetpointArrays",
    ["joint_target", "joint_kp", "joint_kv", "pos", "rot", "task_kp", "task_kv"],
)


@dataclass(frozen=True)
class ControllerConfig:
    """One action-space configuration: kind, gains, bounds, caps, schedule."""

    kind: ActionSpaceKind
    substeps: int = 25                  # torque updates per policy tick (500/20 Hz)
    gravity_comp: bool = True
    critically_damped: bool = False     # derive kv = 2 sqrt(kp) for variable kinds
    lambda_eps: float = LAMBDA_EPS_DEFAULT
    dq_max: float = 0.2                 # per-tick joint delta cap, rad
    dp_max: float = 0.05                # per-tick ee translation cap, m
    dr_max: float = 0.2                 # per-tick ee rotation cap, rad
    joint_kp_bounds: tuple[float, float] = (0.0, 300.0)
    joint_kv_bounds: tuple[float, float] = (0.0, 60.0)
    kp_pos_bounds: tuple[float, float] = (0.0, 500.0)
    kp_ori_bounds: tuple[float, float] = (0.0, 150.0)
    kv_pos_bounds: tuple[float, float] | None = None   # default [0, 2 sqrt(kp_pos_hi)]
    kv_ori_bounds: tuple[float, float] | None = None
    fixed_joint_kp: float = 100.0
    fixed_joint_kv: float = 20.0
    fixed_velocity_kv: float = 8.0      # torque per rad/s for the velocity law
    ee_preset_kp: tuple[float, float] | None = None    # override (kp_pos, kp_ori)

    def __post_init__(self):
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        for cap in (self.dq_max, self.dp_max, self.dr_max):
            if cap <= 0.0:
                raise ValueError("per-tick caps must be positive")
        for lo, hi in (self.joint_kp_bounds, self.joint_kv_bounds,
                       self.kp_pos_bounds, self.kp_ori_bounds):
            if lo > hi or lo < 0.0:
                raise ValueError("gain bounds must be ordered and non-negative")
        if self.kv_pos_bounds is None:
            object.__setattr__(self, "kv_pos_bounds", (0.0, 2.0 * np.sqrt(self.kp_pos_bounds[1])))
        if self.kv_ori_bounds is None:
            object.__setattr__(self, "kv_ori_bounds", (0.0, 2.0 * np.sqrt(self.kp_ori_bounds[1])))

    def action_dim(self, dof: int) -> int:
        return self.kind.action_dim(dof, self.critically_damped)

    def task_preset(self) -> GainSet:
        """Fixed 6-axis impedance gains for this kind (critically damped)."""
        if self.ee_preset_kp is not None:
            kp_pos, kp_ori = self.ee_preset_kp
        elif self.kind in EE_PRESETS:
            kp_pos, kp_ori = EE_PRESETS[self.kind]
        else:
            kp_pos, kp_ori = EE_PRESETS[ActionSpaceKind.EE_IMPEDANCE_MEDIUM]
        kp = np.array([kp_pos] * 3 + [kp_ori] * 3)
        return GainSet(kp=kp, kv=2.0 * np.sqrt(kp))

    def packed(self, model: RobotModel) -> PackedControl:
        n = model.dof
        preset = self.task_preset()
        if self.kind == ActionSpaceKind.JOINT_VELOCITY:
            jkv = np.full(n, self.fixed_velocity_kv)
        else:
            jkv = np.full(n, self.fixed_joint_kv)
        return PackedControl(
            kind=np.int64(int(self.kind)),
            substeps=np.int64(self.substeps),
            gravity_comp=np.int64(1 if self.gravity_comp else 0),
            critically_damped=np.int64(1 if self.critically_damped else 0),
            lambda_eps=float(self.lambda_eps),
            dq_max=float(self.dq_max), dp_max=float(self.dp_max), dr_max=float(self.dr_max),
            joint_kp_lo=float(self.joint_kp_bounds[0]), joint_kp_hi=float(self.joint_kp_bounds[1]),
            joint_kv_lo=float(self.joint_kv_bounds[0]), joint_kv_hi=float(self.joint_kv_bounds[1]),
            kp_pos_lo=float(self.kp_pos_bounds[0]), kp_pos_hi=float(self.kp_pos_bounds[1]),
            kp_ori_lo=float(self.kp_ori_bounds[0]), kp_ori_hi=float(self.kp_ori_bounds[1]),
            kv_pos_lo=float(self.kv_pos_bounds[0]), kv_pos_hi=float(self.kv_pos_bounds[1]),
            kv_ori_lo=float(self.kv_ori_bounds[0]), kv_ori_hi=float(self.kv_ori_bounds[1]),
            fixed_joint_kp=np.full(n, self.fixed_joint_kp),
            fixed_joint_kv=jkv,
            fixed_task_kp=preset.kp.copy(),
            fixed_task_kv=preset.kv.copy(),
        )


@dataclass(frozen=True)
class RobotSnapshot:
    """Robot state plus the dynamics caches the controllers consume.

    Caches are consistent with (q, qd); rebuild the snapshot after every
    physics substep.
    """

    q: np.ndarray
    qd: np.ndarray
    pose: Pose
    twist: Twist
    M: np.ndarray
    J: np.ndarray
    lam: np.ndarray
    grav: np.ndarray


@njit(cache=True)
def _snapshot_kernel(pk, q, qd, eps):
    ws = _make_ws(pk.mass.shape[0])
    _dyn_caches_into(pk, q, qd, ws, True, eps)
    return ws.Ree, ws.pee, ws.tw, ws.M, ws.J, ws.lam, ws.grav


def snapshot_of(model: RobotModel, q, qd, lambda_eps: float = LAMBDA_EPS_DEFAULT) -> RobotSnapshot:
    q = model.check_q(q)
    qd = model.check_q(qd)
    R_ee, p_ee, tw, M, J, lam, grav = _snapshot_kernel(model.packed(), q, qd, lambda_eps)
    return RobotSnapshot(q=q, qd=qd, pose=Pose(R_ee, p_ee),
                         twist=Twist(tw[:3].copy(), tw[3:].copy()), M=M, J=J, lam=lam,
                         grav=grav)


@dataclass(frozen=True)
class Setpoint:
    """Absolute control target for one action-space kind.

    Joint kinds use `joint_target` (torque, velocity, or position depending on
    the kind) with `joint_kp`/`joint_kv`; task-space kinds use the absolute
    `pos`/`rot` target with 6-axis `task_kp`/`task_kv`.
    """

    kind: ActionSpaceKind
    joint_target: np.ndarray
    joint_kp: np.ndarray
    joint_kv: np.ndarray
    pos: np.ndarray
    rot: np.ndarray
    task_kp: np.ndarray
    task_kv: np.ndarray

    def arrays(self) -> SetpointArrays:
        return SetpointArrays(self.joint_target, self.joint_kp, self.joint_kv,
                              self.pos, self.rot, self.task_kp, self.task_kv)

    @staticmethod
    def from_arrays(kind: ActionSpaceKind, arr: SetpointArrays) -> "Setpoint":
        return Setpoint(kind, *arr)


# ---------------------------------------------------------------------------
# Kernels (shared by the public API and the fused simulation loop)


@njit(cache=True)
def _affine(raw, lo, hi):
    return lo + 0.5 * (raw + 1.0) * (hi - lo)


@njit(cache=True)
def _decode_kernel(pk, cc, raw, q, qd, p_ee, R_ee):
    n = q.shape[0]
    kind = cc.kind
    joint_target = np.zeros(n)
    joint_kp = cc.fixed_joint_kp.copy()
    joint_kv = cc.fixed_joint_kv.copy()
    pos = p_ee.copy()
    rot = R_ee.copy()
    task_kp = cc.fixed_task_kp.copy()
    task_kv = cc.fixed_task_kv.copy()
    clipped = np.empty(raw.shape[0])
    for i in range(raw.shape[0]):
        clipped[i] = min(1.0, max(-1.0, raw[i]))
    if kind == 0:       # joint torque
        for i in range(n):
            joint_target[i] = clipped[i] * pk.tau_max[i]
    elif kind == 1:     # joint velocity
        for i in range(n):
            joint_target[i] = clipped[i] * pk.qd_max[i]
    elif kind == 2:     # joint position, fixed gains
        for i in range(n):
            joint_target[i] = q[i] + clipped[i] * cc.dq_max
    elif kind == 3:     # joint variable impedance
        for i in range(n):
            joint_target[i] = q[i] + clipped[i] * cc.dq_max
            joint_kp[i] = _affine(clipped[n + i], cc.joint_kp_lo, cc.joint_kp_hi)
            if cc.critically_damped == 1:
                joint_kv[i] = 2.0 * np.sqrt(joint_kp[i])
            else:
                joint_kv[i] = _affine(clipped[2 * n + i], cc.joint_kv_lo, cc.joint_kv_hi)
    else:               # task-space kinds
        dr = np.empty(3)
        for i in range(3):
            pos[i] = p_ee[i] + clipped[i] * cc.dp_max
            dr[i] = clipped[3 + i] * cc.dr_max
        rot = _mm33(_rotvec_to_matrix(dr), R_ee)
        if kind == 7:   # variable task-space gains
            for i in range(3):
                task_kp[i] = _affine(clipped[6 + i], cc.kp_pos_lo, cc.kp_pos_hi)
                task_kp[3 + i] = _affine(clipped[9 + i], cc.kp_ori_lo, cc.kp_ori_hi)
            if cc.critically_damped == 1:
                for i in range(6):
                    task_kv[i] = 2.0 * np.sqrt(task_kp[i])
            else:
                for i in range(3):
                    task_kv[i] = _affine(clipped[12 + i], cc.kv_pos_lo, cc.kv_pos_hi)
                    task_kv[3 + i] = _affine(clipped[15 + i], cc.kv_ori_lo, cc.kv_ori_hi)
    return SetpointArrays(joint_target, joint_kp, joint_kv, pos, rot, task_kp, task_kv)


@njit(cache=True)
def _hold_kernel(pk, cc, q, p_ee, R_ee):
    """Setpoint that holds the current state (episode-start previous tick)."""
    n = q.shape[0]
    joint_target = np.zeros(n)
    if cc.kind == 2 or cc.kind == 3:
        joint_target = q.copy()
    joint_kp = cc.fixed_joint_kp.copy()
    joint_kv = cc.fixed_joint_kv.copy()
    task_kp = cc.fixed_task_kp.copy()
    task_kv = cc.fixed_task_kv.copy()
    if cc.kind == 3:
        for i in range(n):
            joint_kp[i] = _affine(0.0, cc.joint_kp_lo, cc.joint_kp_hi)
            joint_kv[i] = 2.0 * np.sqrt(joint_kp[i]) if cc.critically_damped == 1 \
                else _affine(0.0, cc.joint_kv_lo, cc.joint_kv_hi)
    if cc.kind == 7:
        for i in range(3):
            task_kp[i] = _affine(0.0, cc.kp_pos_lo, cc.kp_pos_hi)
            task_kp[3 + i] = _affine(0.0, cc.kp_ori_lo, cc.kp_ori_hi)
        for i in range(6):
            task_kv[i] = 2.0 * np.sqrt(task_kp[i]) if cc.critically_damped == 1 \
                else _affine(0.0, cc.kv_pos_lo if i < 3 else cc.kv_ori_lo,
                             cc.kv_pos_hi if i < 3 else cc.kv_ori_hi)
    return SetpointArrays(joint_target, joint_kp, joint_kv, p_ee.copy(), R_ee.copy(),
                          task_kp, task_kv)


@njit(cache=True)
def _interp_into(prev, nxt, frac, o_jt, o_jkp, o_jkv, o_pos, o_rot, o_tkp, o_tkv):
    n = prev.joint_target.shape[0]
    if frac <= 0.0 or frac >= 1.0:
        src = prev if frac <= 0.0 else nxt
        for i in range(n):
            o_jt[i] = src.joint_target[i]
            o_jkp[i] = src.joint_kp[i]
            o_jkv[i] = src.joint_kv[i]
        for i in range(3):
            o_pos[i] = src.pos[i]
            for j in range(3):
                o_rot[i, j] = src.rot[i, j]
        for i in range(6):
            o_tkp[i] = src.task_kp[i]
            o_tkv[i] = src.task_kv[i]
        return
    for i in range(n):
        o_jt[i] = prev.joint_target[i] + frac * (nxt.joint_target[i] - prev.joint_target[i])
        o_jkp[i] = prev.joint_kp[i] + frac * (nxt.joint_kp[i] - prev.joint_kp[i])
        o_jkv[i] = prev.joint_kv[i] + frac * (nxt.joint_kv[i] - prev.joint_kv[i])
    for i in range(3):
        o_pos[i] = prev.pos[i] + frac * (nxt.pos[i] - prev.pos[i])
    for i in range(6):
        o_tkp[i] = prev.task_kp[i] + frac * (nxt.task_kp[i] - prev.task_kp[i])
        o_tkv[i] = prev.task_kv[i] + frac * (nxt.task_kv[i] - prev.task_kv[i])
    # rotation target blends along the geodesic between the two targets
    delta = _matrix_to_rotvec(_mm33_nt(nxt.rot, prev.rot))
    blended = _mm33(_rotvec_to_matrix(frac * delta), prev.rot)
    for i in range(3):
        for j in range(3):
            o_rot[i, j] = blended[i, j]


@njit(cache=True)
def _interp_kernel(prev, nxt, frac):
    n = prev.joint_target.shape[0]
    o_jt = np.empty(n)
    o_jkp = np.empty(n)
    o_jkv = np.empty(n)
    o_pos = np.empty(3)
    o_rot = np.empty((3, 3))
    o_tkp = np.empty(6)
    o_tkv = np.empty(6)
    _interp_into(prev, nxt, frac, o_jt, o_jkp, o_jkv, o_pos, o_rot, o_tkp, o_tkv)
    return SetpointArrays(o_jt, o_jkp, o_jkv, o_pos, o_rot, o_tkp, o_tkv)


@njit(cache=True)
def _torque_into(pk, cc, jt, jkp, jkv, pos, rot, tkp, tkv,
                 q, qd, p_ee, R_ee, tw, M, lam, J, grav, u):
    """Dispatch one interpolated setpoint to its control law; clamp to tau_max."""
    n = q.shape[0]
    kind = cc.kind
    comp = cc.gravity_comp == 1
    if kind == 0:
        for i in range(n):
            u[i] = jt[i]
    elif kind == 1:
        for i in range(n):
            u[i] = jkv[i] * (jt[i] - qd[i])
            if comp:
                u[i] += grav[i]
    elif kind == 2 or kind == 3:
        # PD acceleration scaled through the mass matrix
        acc = np.empty(n)
        for i in range(n):
            acc[i] = jkp[i] * (jt[i] - q[i]) - jkv[i] * qd[i]
        for i in range(n):
            s = 0.0
            for k in range(n):
                s += M[i, k] * acc[k]
            u[i] = s + (grav[i] if comp else 0.0)
    else:
        a0 = tkp[0] * (pos[0] - p_ee[0]) - tkv[0] * tw[0]
        a1 = tkp[1] * (pos[1] - p_ee[1]) - tkv[1] * tw[1]
        a2 = tkp[2] * (pos[2] - p_ee[2]) - tkv[2] * tw[2]
        dr = _matrix_to_rotvec(_mm33_nt(rot, R_ee))
        b0 = tkp[3] * dr[0] - tkv[3] * tw[3]
        b1 = tkp[4] * dr[1] - tkv[4] * tw[4]
        b2 = tkp[5] * dr[2] - tkv[5] * tw[5]
        f0 = lam[0, 0] * a0 + lam[0, 1] * a1 + lam[0, 2] * a2
        f1 = lam[1, 0] * a0 + lam[1, 1] * a1 + lam[1, 2] * a2
        f2 = lam[2, 0] * a0 + lam[2, 1] * a1 + lam[2, 2] * a2
        f3 = lam[3, 3] * b0 + lam[3, 4] * b1 + lam[3, 5] * b2
        f4 = lam[4, 3] * b0 + lam[4, 4] * b1 + lam[4, 5] * b2
        f5 = lam[5, 3] * b0 + lam[5, 4] * b1 + lam[5, 5] * b2
        for i in range(n):
            s = (J[0, i] * f0 + J[1, i] * f1 + J[2, i] * f2
                 + J[3, i] * f3 + J[4, i] * f4 + J[5, i] * f5)
            u[i] = s + (grav[i] if comp else 0.0)
    for i in range(n):
        cap = pk.tau_max[i]
        if u[i] > cap:
            u[i] = cap
        elif u[i] < -cap:
            u[i] = -cap


@njit(cache=True)
def _torque_kernel(pk, cc, sp, q, qd, p_ee, R_ee, tw, M, lam, J, grav):
    u = np.empty(q.shape[0])
    _torque_into(pk, cc, sp.joint_target, sp.joint_kp, sp.joint_kv, sp.pos, sp.rot,
                 sp.task_kp, sp.task_kv, q, qd, p_ee, R_ee, tw, M, lam, J, grav, u)
    return u


# ---------------------------------------------------------------------------
# Public API


def decode_action(config: ControllerConfig, raw: np.ndarray, snapshot: RobotSnapshot,
                  model: RobotModel) -> Setpoint:
    """Map a raw policy action in [-1, 1]^d to an absolute setpoint.

    Deltas scale by the per-tick caps, gains map affinely into their bounds,
    and absolute targets are anchored at the snapshot state.
    """
    raw = np.asarray(raw, dtype=np.float64).reshape(-1)
    expected = config.action_dim(model.dof)
    if raw.shape[0] != expected:
        raise ValueError(f"{config.kind.name} expects {expected} action dims, got {raw.shape[0]}")
    arr = _decode_kernel(model.packed(), config.packed(model), raw,
                         snapshot.q, snapshot.qd, snapshot.pose.p,
                         np.ascontiguousarray(snapshot.pose.R))
    return Setpoint.from_arrays(config.kind, arr)


def hold_setpoint(config: ControllerConfig, snapshot: RobotSnapshot,
                  model: RobotModel) -> Setpoint:
    arr = _hold_kernel(model.packed(), config.packed(model), snapshot.q,
                       snapshot.pose.p, np.ascontiguousarray(snapshot.pose.R))
    return Setpoint.from_arrays(config.kind, arr)


def interpolate_setpoint(prev: Setpoint, nxt: Setpoint, fraction: float) -> Setpoint:
    if prev.kind != nxt.kind:
        raise ValueError("cannot interpolate setpoints of different kinds")
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    return Setpoint.from_arrays(prev.kind, _interp_kernel(prev.arrays(), nxt.arrays(),
                                                          float(fraction)))


def controller_torque(config: ControllerConfig, setpoint: Setpoint,
                      snapshot: RobotSnapshot, model: RobotModel) -> np.ndarray:
    """Torque command for one setpoint at one snapshot (clamped to limits)."""
    tw = np.concatenate([snapshot.twist.linear, snapshot.twist.angular])
    return _torque_kernel(model.packed(), config.packed(model), setpoint.arrays(),
                          snapshot.q, snapshot.qd, snapshot.pose.p,
                          np.ascontiguousarray(snapshot.pose.R), tw,
                          snapshot.M, snapshot.lam, snapshot.J, snapshot.grav)


def joint_torque_control(config, setpoint, snapshot, model):
    assert config.kind == ActionSpaceKind.JOINT_TORQUE
    return controller_torque(config, setpoint, snapshot, model)


def joint_velocity_control(config, setpoint, snapshot, model):
    assert config.kind == ActionSpaceKind.JOINT_VELOCITY
    return controller_torque(config, setpoint, snapshot, model)


def joint_position_control(config, setpoint, snapshot, model):
    assert config.kind in (ActionSpaceKind.JOINT_POSITION, ActionSpaceKind.JOINT_VAR_IMPEDANCE)
    return controller_torque(config, setpoint, snapshot, model)


def ee_impedance_control(config, setpoint, snapshot, model):
    assert config.kind.task_space
    return controller_torque(config, setpoint, snapshot, model)


class ControlTick:
    """Per-environment setpoint scheduler.

    Owns the single piece of controller state: the previous tick's setpoint,
    initialized to hold the reset state.  `run` decodes one policy action and
    emits `substeps` torque commands against snapshots supplied per substep.
    """

    def __init__(self, model: RobotModel, config: ControllerConfig):
        self.model = model
        self.config = config
        self._prev: Setpoint | None = None

    def reset(self, snapshot: RobotSnapshot) -> None:
        self._prev = hold_setpoint(self.config, snapshot, self.model)

    @property
    def previous(self) -> Setpoint:
        if self._prev is None:
            raise RuntimeError("ControlTick.reset must run before the first tick")
        return self._prev

    def run(self, raw_action, snapshot_provider) -> list[np.ndarray]:
        """Decode `raw_action` and emit one torque per substep.

        `snapshot_provider(i)` must return the robot snapshot for substep i;
        tests may close over a constant snapshot, the simulator advances
        physics between calls.
        """
        if self._prev is None:
            raise RuntimeError("ControlTick.reset must run before the first tick")
        first = snapshot_provider(0)
        nxt = decode_action(self.config, raw_action, first, self.model)
        steps = self.config.substeps
        torques = []
        snap = first
        for i in range(steps):
            if i > 0:
                snap = snapshot_provider(i)
            sp = interpolate_setpoint(self._prev, nxt, (i + 1) / steps)
            torques.append(controller_torque(self.config, sp, snap, self.model))
        self._prev = nxt
        return torques
