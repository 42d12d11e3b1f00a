import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from armbench import spatial as sp
from armbench.controllers import (
    ActionSpaceKind,
    ControllerConfig,
    ControlTick,
    controller_torque,
    decode_action,
    ee_impedance_control,
    hold_setpoint,
    interpolate_setpoint,
    joint_position_control,
    joint_torque_control,
    joint_velocity_control,
    snapshot_of,
)

from conftest import random_q

ALL_KINDS = list(ActionSpaceKind)
NON_TORQUE = [k for k in ALL_KINDS if k != ActionSpaceKind.JOINT_TORQUE]


def make_snapshot(model, q=None, qd=None):
    q = model.home_q if q is None else np.asarray(q, float)
    qd = np.zeros(model.dof) if qd is None else np.asarray(qd, float)
    return snapshot_of(model, q, qd)


# ---------------------------------------------------------------------------
# decode_action


def test_decode_zero_action_ee_variable_midpoint_gains(arm_a):
    cfg = ControllerConfig(kind=ActionSpaceKind.EE_VAR_IMPEDANCE)
    snap = make_snapshot(arm_a)
    setp = decode_action(cfg, np.zeros(18), snap, arm_a)
    assert np.allclose(setp.pos, snap.pose.p, atol=0.0)
    assert np.allclose(setp.rot, snap.pose.R, atol=1e-15)
    assert np.allclose(setp.task_kp[:3], 250.0)   # midpoint of [0, 500]
    assert np.allclose(setp.task_kp[3:], 75.0)    # midpoint of [0, 150]


def test_decode_full_scale_translation_hits_cap(arm_a):
    cfg = ControllerConfig(kind=ActionSpaceKind.EE_IMPEDANCE_MEDIUM, dp_max=0.05)
    snap = make_snapshot(arm_a)
    raw = np.zeros(6)
    raw[0] = 1.0
    setp = decode_action(cfg, raw, snap, arm_a)
    assert np.allclose(setp.pos - snap.pose.p, [0.05, 0.0, 0.0], atol=1e-15)


def test_decode_gain_channel_lower_bound(arm_a):
    cfg = ControllerConfig(kind=ActionSpaceKind.JOINT_VAR_IMPEDANCE,
                           joint_kp_bounds=(0.0, 300.0))
    snap = make_snapshot(arm_a)
    raw = np.zeros(21)
    raw[7:14] = -1.0
    setp = decode_action(cfg, raw, snap, arm_a)
    assert np.allclose(setp.joint_kp, 0.0, atol=0.0)


def test_decode_clamps_out_of_range_raw(arm_a):
    cfg = ControllerConfig(kind=ActionSpaceKind.JOINT_POSITION, dq_max=0.2)
    snap = make_snapshot(arm_a)
    setp = decode_action(cfg, np.full(7, 5.0), snap, arm_a)
    assert np.allclose(setp.joint_target - snap.q, 0.2, atol=1e-15)


def test_decode_rejects_wrong_dimension(arm_a):
    cfg = ControllerConfig(kind=ActionSpaceKind.EE_VAR_IMPEDANCE)
    with pytest.raises(ValueError):
        decode_action(cfg, np.zeros(6), make_snapshot(arm_a), arm_a)


def test_decode_monotone_per_channel(arm_a):
    rng = np.random.default_rng(2)
    snap = make_snapshot(arm_a)
    for kind in ALL_KINDS:
        cfg = ControllerConfig(kind=kind)
        d = cfg.action_dim(arm_a.dof)
        for _ in range(5):
            raw = rng.uniform(-0.9, 0.9, d)
            ch = rng.integers(0, d)
            bumped = raw.copy()
            bumped[ch] += 0.1
            a = decode_action(cfg, raw, snap, arm_a)
            b = decode_action(cfg, bumped, snap, arm_a)
            vec_a = np.concatenate([
                a.joint_target, a.joint_kp, a.joint_kv, a.pos,
                sp.matrix_to_rotvec(a.rot @ snap.pose.R.T), a.task_kp, a.task_kv,
            ])
            vec_b = np.concatenate([
                b.joint_target, b.joint_kp, b.joint_kv, b.pos,
                sp.matrix_to_rotvec(b.rot @ snap.pose.R.T), b.task_kp, b.task_kv,
            ])
            assert np.all(vec_b - vec_a >= -1e-12)


# ---------------------------------------------------------------------------
# joint-space laws


def test_joint_torque_passthrough_and_clamp(arm_a):
    cfg = ControllerConfig(kind=ActionSpaceKind.JOINT_TORQUE)
    snap = make_snapshot(arm_a)
    raw = np.full(7, 0.5)
    setp = decode_action(cfg, raw, snap, arm_a)
    u = joint_torque_control(cfg, setp, snap, arm_a)
    assert np.allclose(u, 0.5 * arm_a.tau_max, atol=0.0)

    over = decode_action(cfg, np.ones(7), snap, arm_a)
    object.__setattr__(over, "joint_target", arm_a.tau_max * 2.0)
    u = joint_torque_control(cfg, over, snap, arm_a)
    assert np.array_equal(u, arm_a.tau_max)

    zero = decode_action(cfg, np.zeros(7), snap, arm_a)
    assert np.array_equal(joint_torque_control(cfg, zero, snap, arm_a), np.zeros(7))


def test_joint_velocity_zero_error(arm_a):
    cfg = ControllerConfig(kind=ActionSpaceKind.JOINT_VELOCITY, gravity_comp=False)
    qd = 0.3 * np.ones(7)
    snap = make_snapshot(arm_a, qd=qd)
    setp = decode_action(cfg, qd / arm_a.qd_max, snap, arm_a)
    u = joint_velocity_control(cfg, setp, snap, arm_a)
    assert np.allclose(u, 0.0, atol=1e-12)


def test_joint_velocity_direct_evaluation(one_joint_z):
    cfg = ControllerConfig(kind=ActionSpaceKind.JOINT_VELOCITY, gravity_comp=False,
                           fixed_velocity_kv=2.0)
    snap = make_snapshot(one_joint_z, q=[0.2], qd=[0.1])
    setp = decode_action(cfg, np.array([0.6 / 5.0]), snap, one_joint_z)  # qd_des = 0.6
    u = joint_velocity_control(cfg, setp, snap, one_joint_z)
    assert abs(u[0] - 2.0 * 0.5) < 1e-12


def test_joint_velocity_sign_property(arm_a):
    cfg = ControllerConfig(kind=ActionSpaceKind.JOINT_VELOCITY, gravity_comp=False)
    rng = np.random.default_rng(9)
    snap = make_snapshot(arm_a, qd=rng.uniform(-1, 1, 7))
    setp = decode_action(cfg, rng.uniform(-1, 1, 7), snap, arm_a)
    u = joint_velocity_control(cfg, setp, snap, arm_a)
    err = setp.joint_target - snap.qd
    assert np.all(np.sign(u) == np.sign(err))


def test_joint_position_equilibrium_residual_is_gravity(arm_a):
    cfg = ControllerConfig(kind=ActionSpaceKind.JOINT_POSITION, gravity_comp=True)
    snap = make_snapshot(arm_a)
    setp = decode_action(cfg, np.zeros(7), snap, arm_a)
    u = joint_position_control(cfg, setp, snap, arm_a)
    assert np.array_equal(u, snap.grav)


def test_joint_position_direct_evaluation(one_joint_z):
    # unit inertia, kp=100, kv=20, dq=0.1, qd=0 -> u = 10
    cfg = ControllerConfig(kind=ActionSpaceKind.JOINT_POSITION, gravity_comp=False,
                           fixed_joint_kp=100.0, fixed_joint_kv=20.0, dq_max=0.2)
    snap = make_snapshot(one_joint_z, q=[0.0], qd=[0.0])
    setp = decode_action(cfg, np.array([0.5]), snap, one_joint_z)  # dq = 0.1
    u = joint_position_control(cfg, setp, snap, one_joint_z)
    assert abs(u[0] - 10.0) < 1e-9


def test_joint_position_fixed_and_variable_paths_agree(arm_a):
    rng = np.random.default_rng(21)
    fixed = ControllerConfig(kind=ActionSpaceKind.JOINT_POSITION,
                             fixed_joint_kp=120.0, fixed_joint_kv=24.0)
    var = ControllerConfig(kind=ActionSpaceKind.JOINT_VAR_IMPEDANCE,
                           joint_kp_bounds=(0.0, 240.0), joint_kv_bounds=(0.0, 48.0))
    snap = make_snapshot(arm_a, qd=rng.uniform(-0.5, 0.5, 7))
    dq_raw = rng.uniform(-1, 1, 7)
    sf = decode_action(fixed, dq_raw, snap, arm_a)
    # raw 0 maps to the midpoint = the fixed gains above
    sv = decode_action(var, np.concatenate([dq_raw, np.zeros(14)]), snap, arm_a)
    uf = joint_position_control(fixed, sf, snap, arm_a)
    uv = joint_position_control(var, sv, snap, arm_a)
    assert np.array_equal(uf, uv)


# ---------------------------------------------------------------------------
# task-space impedance law


def test_ee_impedance_zero_error_residual_is_gravity(arm_a):
    for kind in (ActionSpaceKind.EE_IMPEDANCE_LOW, ActionSpaceKind.EE_IMPEDANCE_MEDIUM,
                 ActionSpaceKind.EE_IMPEDANCE_HIGH, ActionSpaceKind.EE_VAR_IMPEDANCE):
        cfg = ControllerConfig(kind=kind, gravity_comp=True)
        snap = make_snapshot(arm_a)
        setp = hold_setpoint(cfg, snap, arm_a)
        u = ee_impedance_control(cfg, setp, snap, arm_a)
        assert np.max(np.abs(u - snap.grav)) < 1e-9


def test_ee_impedance_zero_gains_pure_gravity(arm_a):
    cfg = ControllerConfig(kind=ActionSpaceKind.EE_VAR_IMPEDANCE, gravity_comp=True)
    rng = np.random.default_rng(33)
    snap = make_snapshot(arm_a, qd=rng.uniform(-0.5, 0.5, 7))
    raw = rng.uniform(-1, 1, 18)
    raw[6:] = -1.0     # gains at the lower (zero) bound
    setp = decode_action(cfg, raw, snap, arm_a)
    u = ee_impedance_control(cfg, setp, snap, arm_a)
    assert np.max(np.abs(u - snap.grav)) < 1e-12


def test_ee_impedance_decoupled_axis_response(arm_a):
    # a pure +x positional error must accelerate the ee dominantly along +x
    cfg = ControllerConfig(kind=ActionSpaceKind.EE_IMPEDANCE_MEDIUM, gravity_comp=True)
    snap = make_snapshot(arm_a)
    raw = np.zeros(6)
    raw[0] = 1.0
    setp = decode_action(cfg, raw, snap, arm_a)
    u = ee_impedance_control(cfg, setp, snap, arm_a)
    qdd = np.linalg.solve(snap.M, u - snap.grav)
    acc = snap.J @ qdd
    # the position rows of the task inertia are diagonal dominant here, so the
    # linear response decouples; the angular probe response is unconstrained
    assert acc[0] > 0.0
    assert np.max(np.abs(acc[1:3])) < 0.1 * acc[0]


def test_ee_variable_matches_fixed_preset_bitwise(arm_a):
    # variable-impedance gains set exactly at a preset reproduce the fixed law
    rng = np.random.default_rng(41)
    snap = make_snapshot(arm_a, qd=rng.uniform(-0.3, 0.3, 7))
    for kind in (ActionSpaceKind.EE_IMPEDANCE_LOW, ActionSpaceKind.EE_IMPEDANCE_MEDIUM,
                 ActionSpaceKind.EE_IMPEDANCE_HIGH):
        fixed_cfg = ControllerConfig(kind=kind)
        var_cfg = ControllerConfig(kind=ActionSpaceKind.EE_VAR_IMPEDANCE)
        delta = rng.uniform(-1, 1, 6)
        sf = decode_action(fixed_cfg, delta, snap, arm_a)
        sv_fixed_gains = decode_action(var_cfg, np.concatenate([delta, np.zeros(12)]), snap, arm_a)
        object.__setattr__(sv_fixed_gains, "task_kp", sf.task_kp.copy())
        object.__setattr__(sv_fixed_gains, "task_kv", sf.task_kv.copy())
        uf = ee_impedance_control(fixed_cfg, sf, snap, arm_a)
        uv = ee_impedance_control(var_cfg, sv_fixed_gains, snap, arm_a)
        assert np.array_equal(uf, uv)


def test_ee_variable_tick_matches_fixed_high_bitwise(arm_a):
    # critically-damped variable mode with kp raw at +1 decodes to exactly the
    # high preset, so whole ticks must agree bit-for-bit
    fixed_cfg = ControllerConfig(kind=ActionSpaceKind.EE_IMPEDANCE_HIGH, substeps=5)
    var_cfg = ControllerConfig(kind=ActionSpaceKind.EE_VAR_IMPEDANCE, substeps=5,
                               critically_damped=True)
    snap = make_snapshot(arm_a)
    tick_f = ControlTick(arm_a, fixed_cfg)
    tick_v = ControlTick(arm_a, var_cfg)
    tick_f.reset(snap)
    tick_v.reset(snap)
    delta = np.array([0.3, -0.2, 0.5, 0.1, 0.0, -0.4])
    uf = tick_f.run(delta, lambda i: snap)
    uv = tick_v.run(np.concatenate([delta, np.ones(6)]), lambda i: snap)
    # first tick interpolates from hold setpoints whose variable gains differ
    # (midpoint vs preset); from the second tick on the streams coincide
    uf2 = tick_f.run(delta, lambda i: snap)
    uv2 = tick_v.run(np.concatenate([delta, np.ones(6)]), lambda i: snap)
    for a, b in zip(uf2, uv2):
        assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# interpolation and the tick scheduler


def test_interpolation_endpoints_exact(arm_a):
    cfg = ControllerConfig(kind=ActionSpaceKind.EE_VAR_IMPEDANCE)
    rng = np.random.default_rng(5)
    snap = make_snapshot(arm_a)
    a = decode_action(cfg, rng.uniform(-1, 1, 18), snap, arm_a)
    b = decode_action(cfg, rng.uniform(-1, 1, 18), snap, arm_a)
    at0 = interpolate_setpoint(a, b, 0.0)
    at1 = interpolate_setpoint(a, b, 1.0)
    for name in ("joint_target", "pos", "rot", "task_kp", "task_kv"):
        assert np.array_equal(getattr(at0, name), getattr(a, name))
        assert np.array_equal(getattr(at1, name), getattr(b, name))


def test_interpolation_scalar_midpoint(arm_a):
    cfg = ControllerConfig(kind=ActionSpaceKind.JOINT_POSITION)
    snap = make_snapshot(arm_a)
    a = decode_action(cfg, np.zeros(7), snap, arm_a)
    b = decode_action(cfg, np.zeros(7), snap, arm_a)
    object.__setattr__(a, "joint_target", np.zeros(7))
    object.__setattr__(b, "joint_target", np.ones(7))
    mid = interpolate_setpoint(a, b, 0.5)
    assert np.allclose(mid.joint_target, 0.5, atol=0.0)


def test_interpolation_rotation_geodesic_midpoint(arm_a):
    cfg = ControllerConfig(kind=ActionSpaceKind.EE_IMPEDANCE_MEDIUM)
    snap = make_snapshot(arm_a)
    a = hold_setpoint(cfg, snap, arm_a)
    b = hold_setpoint(cfg, snap, arm_a)
    object.__setattr__(a, "rot", np.eye(3))
    object.__setattr__(b, "rot", sp.rotvec_to_matrix([0.0, 0.0, 0.2]))
    mid = interpolate_setpoint(a, b, 0.5)
    assert np.max(np.abs(mid.rot - sp.rotvec_to_matrix([0.0, 0.0, 0.1]))) < 1e-12


def test_interpolation_rejects_kind_mismatch(arm_a):
    snap = make_snapshot(arm_a)
    a = hold_setpoint(ControllerConfig(kind=ActionSpaceKind.JOINT_POSITION), snap, arm_a)
    b = hold_setpoint(ControllerConfig(kind=ActionSpaceKind.JOINT_TORQUE), snap, arm_a)
    with pytest.raises(ValueError):
        interpolate_setpoint(a, b, 0.5)


def test_tick_single_substep_degenerate(arm_a):
    cfg = ControllerConfig(kind=ActionSpaceKind.EE_IMPEDANCE_MEDIUM, substeps=1)
    snap = make_snapshot(arm_a)
    tick = ControlTick(arm_a, cfg)
    tick.reset(snap)
    raw = np.array([0.4, 0.0, -0.3, 0.0, 0.2, 0.0])
    [u] = tick.run(raw, lambda i: snap)
    direct = controller_torque(cfg, decode_action(cfg, raw, snap, arm_a), snap, arm_a)
    assert np.array_equal(u, direct)


def test_tick_constant_action_reaches_fixed_point(arm_a):
    cfg = ControllerConfig(kind=ActionSpaceKind.JOINT_POSITION, substeps=4)
    snap = make_snapshot(arm_a)
    tick = ControlTick(arm_a, cfg)
    tick.reset(snap)
    raw = np.full(7, 0.25)
    tick.run(raw, lambda i: snap)
    second = tick.run(raw, lambda i: snap)
    for u in second[1:]:
        assert np.array_equal(u, second[0])


def test_tick_last_substep_equals_decoded_setpoint(arm_a):
    cfg = ControllerConfig(kind=ActionSpaceKind.EE_VAR_IMPEDANCE, substeps=7)
    snap = make_snapshot(arm_a)
    tick = ControlTick(arm_a, cfg)
    tick.reset(snap)
    raw = np.linspace(-0.8, 0.8, 18)
    torques = tick.run(raw, lambda i: snap)
    direct = controller_torque(cfg, decode_action(cfg, raw, snap, arm_a), snap, arm_a)
    assert np.array_equal(torques[-1], direct)


def test_tick_first_use_requires_reset(arm_a):
    tick = ControlTick(arm_a, ControllerConfig(kind=ActionSpaceKind.JOINT_TORQUE))
    with pytest.raises(RuntimeError):
        tick.run(np.zeros(7), lambda i: make_snapshot(arm_a))


def test_tick_initial_hold_gives_gravity_torque(arm_a):
    # before the interpolated target departs from hold, the command stays
    # near pure gravity compensation
    cfg = ControllerConfig(kind=ActionSpaceKind.EE_IMPEDANCE_MEDIUM, substeps=25)
    snap = make_snapshot(arm_a)
    tick = ControlTick(arm_a, cfg)
    tick.reset(snap)
    torques = tick.run(np.zeros(6), lambda i: snap)
    for u in torques:
        assert np.max(np.abs(u - snap.grav)) < 1e-9


# ---------------------------------------------------------------------------
# torque-limit and fixed-point invariants across kinds


def test_all_torques_respect_limits(arm_a):
    rng = np.random.default_rng(61)
    for kind in ALL_KINDS:
        cfg = ControllerConfig(kind=kind)
        for _ in range(20):
            snap = make_snapshot(arm_a, q=random_q(arm_a, rng),
                                 qd=rng.uniform(-2, 2, 7))
            raw = rng.uniform(-1, 1, cfg.action_dim(arm_a.dof))
            setp = decode_action(cfg, raw, snap, arm_a)
            u = controller_torque(cfg, setp, snap, arm_a)
            assert np.all(np.abs(u) <= arm_a.tau_max)


def test_zero_error_fixed_point_all_non_torque_kinds(arm_a, arm_b):
    rng = np.random.default_rng(67)
    for model in (arm_a, arm_b):
        for kind in NON_TORQUE:
            cfg = ControllerConfig(kind=kind, gravity_comp=True)
            for _ in range(25):
                snap = make_snapshot(model, q=random_q(model, rng))
                setp = hold_setpoint(cfg, snap, model)
                u = controller_torque(cfg, setp, snap, model)
                assert np.max(np.abs(u - snap.grav)) < 1e-9

            cfg_off = ControllerConfig(kind=kind, gravity_comp=False)
            snap = make_snapshot(model, q=random_q(model, rng))
            setp = hold_setpoint(cfg_off, snap, model)
            u = controller_torque(cfg_off, setp, snap, model)
            assert np.max(np.abs(u)) < 1e-9


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 7), st.floats(0.0, 1.0))
def test_interpolation_stays_between_endpoints(kind_idx, frac):
    from armbench.model import bundled_robot
    model = bundled_robot("arm_a")
    kind = ALL_KINDS[kind_idx]
    cfg = ControllerConfig(kind=kind)
    rng = np.random.default_rng(71)
    snap = make_snapshot(model, q=model.home_q)
    a = decode_action(cfg, rng.uniform(-1, 1, cfg.action_dim(7)), snap, model)
    b = decode_action(cfg, rng.uniform(-1, 1, cfg.action_dim(7)), snap, model)
    mid = interpolate_setpoint(a, b, frac)
    for name in ("joint_target", "joint_kp", "joint_kv", "pos", "task_kp", "task_kv"):
        lo = np.minimum(getattr(a, name), getattr(b, name)) - 1e-12
        hi = np.maximum(getattr(a, name), getattr(b, name)) + 1e-12
        val = getattr(mid, name)
        assert np.all(val >= lo) and np.all(val <= hi)
