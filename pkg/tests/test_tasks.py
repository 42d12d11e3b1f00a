import numpy as np
import pytest

from armbench.controllers import ActionSpaceKind, ControllerConfig
from armbench.tasks import (
    DoorTaskConfig,
    PathPhase,
    PathTaskConfig,
    TaskEnv,
    TaskKind,
    ViaPointTracker,
    WipingTaskConfig,
    door_reward_components,
    door_success,
    make_env,
    path_reward_components,
    stain_blob,
    success_metric,
    wiping_reward_components,
)


def ee_cfg(substeps=25, **kw):
    return ControllerConfig(kind=ActionSpaceKind.EE_IMPEDANCE_MEDIUM, substeps=substeps, **kw)


# ---------------------------------------------------------------------------
# via points


def test_via_checks_within_threshold():
    tr = ViaPointTracker([[0.5, 0.0, 0.3], [0.5, 0.2, 0.3]], threshold=0.05)
    assert tr.update(np.array([0.5, 0.04, 0.3])) == 1     # 4 cm away: checks
    assert tr.checked.tolist() == [True, False]


def test_via_does_not_check_outside_threshold():
    tr = ViaPointTracker([[0.5, 0.0, 0.3]], threshold=0.05)
    assert tr.update(np.array([0.5, 0.06, 0.3])) == 0     # 6 cm away: no check
    assert not tr.checked.any()


def test_via_checks_in_order_only():
    tr = ViaPointTracker([[0.5, 0.0, 0.3], [0.5, 0.2, 0.3]], threshold=0.05)
    # sitting on the second point does nothing while the first is unchecked
    assert tr.update(np.array([0.5, 0.2, 0.3])) == 0
    assert tr.update(np.array([0.5, 0.0, 0.3])) == 1
    assert tr.update(np.array([0.5, 0.2, 0.3])) == 1
    assert tr.all_checked


def test_via_checked_flags_never_unset():
    tr = ViaPointTracker([[0.5, 0.0, 0.3]], threshold=0.05)
    tr.update(np.array([0.5, 0.0, 0.3]))
    tr.update(np.array([5.0, 5.0, 5.0]))
    assert tr.checked.all()


# ---------------------------------------------------------------------------
# reward formulas


def test_path_completion_bonus_from_remaining_ticks():
    cfg = PathTaskConfig()
    comps = path_reward_components(1, 0.0, True, True, ticks_remaining=100,
                                   tick_energy=0.0, cfg=cfg)
    assert comps["completion_bonus"] == 0.5 * 100


def test_path_energy_penalty_only_in_energy_phase():
    base = PathTaskConfig()
    comps = path_reward_components(0, 0.5, False, False, 10, 3.0, base)
    assert "energy_penalty" not in comps
    cfg = PathTaskConfig(phase=PathPhase.ENERGY)
    comps = path_reward_components(0, 0.5, False, False, 10, 3.0, cfg)
    assert comps["energy_penalty"] == pytest.approx(-0.002 * 3.0)


def test_path_dense_reward_bounded():
    cfg = PathTaskConfig()
    near = path_reward_components(0, 0.0, False, False, 10, 0.0, cfg)
    far = path_reward_components(0, 100.0, False, False, 10, 0.0, cfg)
    assert near["dense_distance"] == pytest.approx(0.1)
    assert 0.0 < far["dense_distance"] < near["dense_distance"]


def test_door_force_penalty_thresholds():
    cfg = DoorTaskConfig()
    below = door_reward_components(0.5, 0.5, 30.0, False, False, cfg)
    assert below["force_penalty"] == 0.0
    above = door_reward_components(0.5, 0.5, 50.0, False, False, cfg)
    assert above["force_penalty"] == pytest.approx(-0.05 * 10.0)


def test_door_progress_and_near_bonus():
    cfg = DoorTaskConfig()
    goal = cfg.theta_goal
    prev_gap = abs(np.deg2rad(59.0) - goal)
    new_gap = abs(np.deg2rad(60.0) - goal)
    comps = door_reward_components(prev_gap, new_gap, 0.0, False, False, cfg)
    assert comps["door_progress"] > 0.0
    assert comps["door_near_bonus"] == cfg.near_bonus


def test_wiping_reward_example_tick():
    cfg = WipingTaskConfig()
    comps = wiping_reward_components(3, False, True, 28.0, False, False, cfg)
    assert comps["wipe_reward"] == 3.0
    assert comps["contact_bonus"] == 0.01
    assert comps["force_penalty"] == 0.0


def test_wiping_penalties_on_events():
    cfg = WipingTaskConfig()
    comps = wiping_reward_components(0, False, False, 0.0, True, False, cfg)
    assert comps["joint_limit_penalty"] == -100.0
    comps = wiping_reward_components(0, False, False, 0.0, False, True, cfg)
    assert comps["collision_penalty"] == -100.0


def test_door_success_formula():
    goal = np.deg2rad(60.0)
    assert door_success(goal, goal) == 1.0
    assert door_success(0.0, goal) == 0.0
    assert door_success(np.deg2rad(30.0), goal) == pytest.approx(0.5)
    assert door_success(np.deg2rad(90.0), goal) == pytest.approx(0.5)
    assert 0.0 <= door_success(np.deg2rad(150.0), goal) <= 1.0


def test_door_success_piecewise_linear_peak():
    goal = np.deg2rad(60.0)
    thetas = np.linspace(0, np.deg2rad(90), 91)
    vals = [door_success(t, goal) for t in thetas]
    assert max(vals) == pytest.approx(1.0)
    assert np.argmax(vals) == 60


# ---------------------------------------------------------------------------
# stain generation


def test_stain_blob_connected_and_sized():
    rng = np.random.default_rng(4)
    for _ in range(20):
        blob = stain_blob(rng, 8, 8, 16)
        assert len(blob) == 16
        cells = {tuple(c) for c in blob}
        assert len(cells) == 16
        # connectivity: flood fill from the first cell reaches all
        frontier = [next(iter(cells))]
        seen = {frontier[0]}
        while frontier:
            i, j = frontier.pop()
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                nb = (i + di, j + dj)
                if nb in cells and nb not in seen:
                    seen.add(nb)
                    frontier.append(nb)
        assert seen == cells


# ---------------------------------------------------------------------------
# environments


@pytest.fixture(scope="module")
def path_env(arm_a):
    return make_env(TaskKind.PATH_FOLLOWING, arm_a, ee_cfg())


def test_reset_deterministic(arm_a):
    for kind in TaskKind:
        env = make_env(kind, arm_a, ee_cfg())
        a = env.reset(seed=123)
        b = env.reset(seed=123)
        assert np.array_equal(a.vector, b.vector)


def test_reset_path_flags_clear(path_env):
    obs = path_env.reset(seed=0)
    assert np.array_equal(obs.slice("via_checked"), np.zeros(4))
    assert obs.vector.shape == (path_env.observation_dim,)


def test_wiping_friction_sampling_range(arm_a):
    env = make_env(TaskKind.SURFACE_WIPING, arm_a, ee_cfg())
    mus = []
    for seed in range(1000):
        env.reset(seed=seed)
        mus.append(env._mu)
    assert min(mus) >= 0.1
    assert max(mus) <= 1.0
    assert np.ptp(mus) > 0.5  # actually spans the range


def test_step_reward_total_is_component_sum(arm_a):
    env = make_env(TaskKind.PATH_FOLLOWING, arm_a, ee_cfg(substeps=5))
    env.reset(seed=1)
    rng = np.random.default_rng(2)
    for _ in range(10):
        _, breakdown, done, _ = env.step(rng.uniform(-1, 1, env.action_dim))
        assert breakdown.total == pytest.approx(sum(breakdown.components.values()), abs=1e-12)
        if done:
            break


def test_step_after_done_raises(arm_a):
    cfg = PathTaskConfig(horizon=2)
    env = TaskEnv(cfg, arm_a, ee_cfg(substeps=2))
    env.reset(seed=0)
    env.step(np.zeros(env.action_dim))
    _, _, done, result = env.step(np.zeros(env.action_dim))
    assert done
    assert result.termination == "horizon"
    with pytest.raises(RuntimeError):
        env.step(np.zeros(env.action_dim))


def test_episode_deterministic_given_seed_and_actions(arm_a):
    def run():
        env = make_env(TaskKind.SURFACE_WIPING, arm_a, ee_cfg(substeps=5))
        env.reset(seed=7)
        rng = np.random.default_rng(11)
        trace = []
        for _ in range(20):
            obs, breakdown, done, result = env.step(rng.uniform(-1, 1, env.action_dim))
            trace.append((obs.vector.copy(), breakdown.total))
            if done:
                break
        return trace

    a, b = run(), run()
    for (va, ra), (vb, rb) in zip(a, b):
        assert np.array_equal(va, vb)
        assert ra == rb


def test_door_env_observation_layout(arm_a):
    env = make_env(TaskKind.DOOR_OPENING, arm_a, ee_cfg(substeps=5))
    obs = env.reset(seed=3)
    assert obs.slice("door_state").shape == (2,)
    assert obs.vector.shape == (17,)


def test_door_env_starts_caged(arm_a):
    env = make_env(TaskKind.DOOR_OPENING, arm_a, ee_cfg(substeps=5))
    env.reset(seed=3)
    from armbench.engine import ee_state
    _, p_ee, _ = ee_state(arm_a, env.state.q, env.state.qd)
    handle = env._door_params.handle_world(0.0)
    assert np.linalg.norm(handle - p_ee) < 1e-9


def test_wiping_success_fraction(arm_a):
    env = make_env(TaskKind.SURFACE_WIPING, arm_a, ee_cfg(substeps=5))
    env.reset(seed=5)
    env.state.wiped[:8] = 1
    _, _, _, result = env.step(np.zeros(env.action_dim))
    assert result.success == pytest.approx(env.state.wiped.sum() / env.state.wiped.size)


def test_success_metric_empty_trace():
    from armbench.tasks import EpisodeResult
    assert success_metric(TaskKind.PATH_FOLLOWING, EpisodeResult()) == 0.0


def test_scripted_ee_policy_checks_via_points(arm_a):
    # a hand-scripted feedback policy drives the medium-impedance controller
    # through all four via-points well before the horizon
    env = make_env(TaskKind.PATH_FOLLOWING, arm_a, ee_cfg())
    obs = env.reset(seed=9)
    cap = env.control.dp_max
    for t in range(200):
        ee = obs.slice("ee_pos")
        target = env._via.points[min(env._via.next_index, 3)]
        delta = np.clip((target - ee) / cap, -1.0, 1.0)
        raw = np.concatenate([delta, np.zeros(3)])
        obs, _, done, result = env.step(raw)
        if env._via.all_checked:
            break
    assert env._via.all_checked
    assert result.success == 1.0
    assert env._tick < 120


def test_scripted_door_policy_reaches_goal(arm_a):
    env = make_env(TaskKind.DOOR_OPENING, arm_a, ee_cfg())
    obs = env.reset(seed=9)
    cfg = env.cfg
    door = env._door_params
    cap = env.control.dp_max
    success = 0.0
    for t in range(150):
        theta = env.state.door_angle
        # chase a handle position slightly ahead of the door's current angle
        lead = min(theta + 0.25, cfg.theta_goal)
        target = door.handle_world(lead)
        ee = obs.slice("ee_pos")
        delta = np.clip((target - ee) / cap, -1.0, 1.0)
        obs, _, done, result = env.step(np.concatenate([delta, np.zeros(3)]))
        success = result.success
        if done or abs(theta - cfg.theta_goal) < np.deg2rad(1.0):
            break
    assert success > 0.9


def test_scripted_wiping_policy_wipes(arm_a):
    env = make_env(TaskKind.SURFACE_WIPING, arm_a, ee_cfg())
    obs = env.reset(seed=2)
    cfg = env.cfg
    plane = env._sim.scene.contact.plane_height
    cap = env.control.dp_max
    xs, ys = env._grid_xy
    wiped_any = False
    for t in range(200):
        ee = obs.slice("ee_pos")
        unwiped = env._blob[env.state.wiped == 0]
        if len(unwiped) == 0:
            break
        cell = unwiped[0]
        # press below the surface while steering over the next stain cell
        target = np.array([xs[cell[0]], ys[cell[1]], plane + 0.105])
        delta = np.clip((target - ee) / cap, -1.0, 1.0)
        obs, breakdown, done, result = env.step(np.concatenate([delta, np.zeros(3)]))
        wiped_any = wiped_any or breakdown["wipe_reward"] > 0
        if done:
            break
    assert wiped_any
    assert result.success > 0.5
