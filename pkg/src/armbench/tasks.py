"""The three benchmark environments: path following, door opening, surface
wiping.

Each TaskEnv owns one WorldState and a fused TickSimulator; a step consumes
one raw policy action, runs the control substeps, accumulates the reward
components for the tick, and reports termination plus episode aggregates.
All randomness flows from the reset seed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .controllers import ControllerConfig, _decode_kernel, _hold_kernel
from .engine import TickSimulator, ee_state
from .model import RobotModel
from .world import (
    ContactParams,
    DoorParams,
    SceneKind,
    SceneParams,
    ToolGeometry,
    WorldState,
    _check_finite,
)


class TaskKind(str, enum.Enum):
    PATH_FOLLOWING = "path_following"
    DOOR_OPENING = "door_opening"
    SURFACE_WIPING = "surface_wiping"


class PathPhase(str, enum.Enum):
    COMPLETION = "completion"
    ENERGY = "energy"


REWARD_COMPONENTS = (
    "via_hit", "dense_distance", "completion_bonus", "energy_penalty",
    "door_progress", "door_near_bonus", "force_penalty",
    "joint_limit_penalty", "collision_penalty",
    "wipe_reward", "all_wiped_bonus", "contact_bonus",
)


@dataclass(frozen=True)
class RewardBreakdown:
    """Named reward components; the total is their exact sum."""

    components: dict

    @property
    def total(self) -> float:
        return float(sum(self.components.values()))

    def __getitem__(self, name: str) -> float:
        return self.components.get(name, 0.0)


@dataclass(frozen=True)
class Observation:
    """Flat observation vector plus named slice layout."""

    vector: np.ndarray
    layout: tuple

    def slice(self, name: str) -> np.ndarray:
        start = 0
        for n, length in self.layout:
            if n == name:
                return self.vector[start:start + length]
            start += length
        raise KeyError(name)


@dataclass
class EpisodeResult:
    """Aggregates maintained while an episode runs."""

    success: float = 0.0
    total_reward: float = 0.0
    energy: float = 0.0
    mean_force: float = 0.0
    max_force: float = 0.0
    termination: str = "running"
    ticks: int = 0


class ViaPointTracker:
    """Ordered via-point checking within a fixed threshold distance."""

    def __init__(self, points: np.ndarray, threshold: float):
        self.points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        self.threshold = float(threshold)
        self.checked = np.zeros(len(self.points), dtype=bool)

    @property
    def next_index(self) -> int:
        unchecked = np.flatnonzero(~self.checked)
        return int(unchecked[0]) if unchecked.size else len(self.points)

    def distance_to_next(self, ee_pos: np.ndarray) -> float:
        i = self.next_index
        if i >= len(self.points):
            return 0.0
        return float(np.linalg.norm(self.points[i] - ee_pos))

    def update(self, ee_pos: np.ndarray) -> int:
        """Check points in order while the next one is within threshold."""
        newly = 0
        while self.next_index < len(self.points):
            i = self.next_index
            if np.linalg.norm(self.points[i] - ee_pos) < self.threshold:
                self.checked[i] = True
                newly += 1
            else:
                break
        return newly

    @property
    def all_checked(self) -> bool:
        return bool(self.checked.all())


# ---------------------------------------------------------------------------
# task configurations


@dataclass(frozen=True)
class PathTaskConfig:
    phase: PathPhase = PathPhase.COMPLETION
    horizon: int = 200
    # fixed plan: constant-x plane, hops sized for a 10 s desk-scale episode
    via_points: tuple = (
        (0.45, -0.15, 0.32),
        (0.45, -0.02, 0.45),
        (0.45, 0.12, 0.35),
        (0.45, 0.10, 0.55),
    )
    threshold: float = 0.05          # d_th, m
    via_hit_reward: float = 10.0
    dense_coef: float = 0.1
    completion_coef: float = 0.5     # times remaining ticks, once
    energy_coef: float = 0.002       # phase-two only
    start_jitter: float = 0.02       # uniform joint perturbation at reset, rad

    kind = TaskKind.PATH_FOLLOWING


@dataclass(frozen=True)
class DoorTaskConfig:
    horizon: int = 150
    theta_goal: float = np.deg2rad(60.0)
    near_band: float = np.deg2rad(5.0)
    progress_coef: float = 2.0
    near_bonus: float = 0.5
    force_threshold: float = 40.0
    force_coef: float = 0.05
    limit_penalty: float = 50.0
    collision_penalty: float = 50.0
    hinge_from_ee: tuple = (-0.35, 0.0, 0.0)   # hinge anchor relative to start ee
    door: DoorParams = field(default_factory=DoorParams)
    floor_z: float = 0.05
    start_jitter: float = 0.01

    kind = TaskKind.DOOR_OPENING


@dataclass(frozen=True)
class WipingTaskConfig:
    horizon: int = 200
    grid_nx: int = 8
    grid_ny: int = 8
    grid_x: tuple = (0.32, 0.60)
    grid_y: tuple = (-0.14, 0.14)
    stain_cells: int = 16
    mu_range: tuple = (0.1, 1.0)
    wipe_reward: float = 1.0
    all_wiped_bonus: float = 50.0
    contact_bonus: float = 0.01
    force_threshold: float = 40.0
    force_coef: float = 0.05
    limit_penalty: float = 100.0
    collision_penalty: float = 100.0
    contact: ContactParams = field(default_factory=ContactParams)
    tool: ToolGeometry = field(default_factory=ToolGeometry)
    start_jitter: float = 0.08

    kind = TaskKind.SURFACE_WIPING


TaskConfig = PathTaskConfig | DoorTaskConfig | WipingTaskConfig


def default_task_config(kind: TaskKind) -> TaskConfig:
    return {
        TaskKind.PATH_FOLLOWING: PathTaskConfig,
        TaskKind.DOOR_OPENING: DoorTaskConfig,
        TaskKind.SURFACE_WIPING: WipingTaskConfig,
    }[TaskKind(kind)]()


# ---------------------------------------------------------------------------
# reward pieces (pure; the env feeds them per-tick quantities)


def path_reward_components(newly_checked: int, dist_next: float, all_checked: bool,
                           completed_now: bool, ticks_remaining: int,
                           tick_energy: float, cfg: PathTaskConfig) -> dict:
    comps = {
        "via_hit": cfg.via_hit_reward * newly_checked,
        "dense_distance": 0.0 if all_checked else cfg.dense_coef / (1.0 + dist_next),
        "completion_bonus": cfg.completion_coef * ticks_remaining if completed_now else 0.0,
    }
    if cfg.phase == PathPhase.ENERGY:
        comps["energy_penalty"] = -cfg.energy_coef * tick_energy
    return comps


def door_reward_components(prev_gap: float, new_gap: float, mean_force: float,
                           limit: bool, collision: bool, cfg: DoorTaskConfig) -> dict:
    comps = {
        "door_progress": cfg.progress_coef * (prev_gap - new_gap),
        "door_near_bonus": cfg.near_bonus if new_gap < cfg.near_band else 0.0,
        "force_penalty": -cfg.force_coef * max(0.0, mean_force - cfg.force_threshold),
    }
    if limit:
        comps["joint_limit_penalty"] = -cfg.limit_penalty
    if collision:
        comps["collision_penalty"] = -cfg.collision_penalty
    return comps


def wiping_reward_components(newly_wiped: int, all_wiped_now: bool, contact: bool,
                             mean_force: float, limit: bool, collision: bool,
                             cfg: WipingTaskConfig) -> dict:
    comps = {
        "wipe_reward": cfg.wipe_reward * newly_wiped,
        "all_wiped_bonus": cfg.all_wiped_bonus if all_wiped_now else 0.0,
        "contact_bonus": cfg.contact_bonus if contact else 0.0,
        "force_penalty": -cfg.force_coef * max(0.0, mean_force - cfg.force_threshold),
    }
    if limit:
        comps["joint_limit_penalty"] = -cfg.limit_penalty
    if collision:
        comps["collision_penalty"] = -cfg.collision_penalty
    return comps


def door_success(theta: float, theta_goal: float) -> float:
    """Fraction of the goal angle achieved: 1 - |theta - goal| / goal, clamped."""
    if theta_goal <= 0.0:
        raise ValueError("theta_goal must be positive")
    return float(np.clip(1.0 - abs(theta - theta_goal) / theta_goal, 0.0, 1.0))


def rot6(R: np.ndarray) -> np.ndarray:
    """6-d orientation encoding: the first two rotation-matrix columns."""
    return np.concatenate([R[:, 0], R[:, 1]])


def stain_blob(rng: np.random.Generator, nx: int, ny: int, cells: int) -> np.ndarray:
    """Connected random-walk blob of grid indices (i, j)."""
    i = int(rng.integers(1, nx - 1))
    j = int(rng.integers(1, ny - 1))
    visited = {(i, j)}
    while len(visited) < cells:
        di, dj = ((1, 0), (-1, 0), (0, 1), (0, -1))[int(rng.integers(0, 4))]
        i = min(max(i + di, 0), nx - 1)
        j = min(max(j + dj, 0), ny - 1)
        visited.add((i, j))
    idx = np.array(sorted(visited), dtype=np.int64)
    return idx


# ---------------------------------------------------------------------------
# environment


class TaskEnv:
    """One benchmark environment instance; owned by a single worker."""

    def __init__(self, task_cfg: TaskConfig, robot: RobotModel,
                 control: ControllerConfig, start_q: np.ndarray | None = None):
        self.cfg = task_cfg
        self.kind = task_cfg.kind
        self.robot = robot
        self.control = control
        self.start_q = robot.home_q if start_q is None else np.asarray(start_q, float)
        self.pk = robot.packed()
        self.cc = control.packed(robot)
        self._done = True
        self._state: WorldState | None = None
        self._sim: TickSimulator | None = None
        if self.kind == TaskKind.SURFACE_WIPING:
            xs = np.linspace(task_cfg.grid_x[0], task_cfg.grid_x[1], task_cfg.grid_nx)
            ys = np.linspace(task_cfg.grid_y[0], task_cfg.grid_y[1], task_cfg.grid_ny)
            self._grid_xy = (xs, ys)

    # -- dimensions ---------------------------------------------------------

    @property
    def action_dim(self) -> int:
        return self.control.action_dim(self.robot.dof)

    @property
    def observation_dim(self) -> int:
        base = 3 + 6 + 6
        if self.kind == TaskKind.PATH_FOLLOWING:
            n_via = len(self.cfg.via_points)
            return base + 4 * n_via
        if self.kind == TaskKind.DOOR_OPENING:
            return base + 2
        return base + self.cfg.grid_nx * self.cfg.grid_ny

    # -- episode control ----------------------------------------------------

    def reset(self, seed: int) -> Observation:
        rng = np.random.default_rng(seed)
        cfg = self.cfg
        q0 = self.start_q.copy()
        if cfg.start_jitter > 0.0:
            q0 = q0 + rng.uniform(-cfg.start_jitter, cfg.start_jitter, self.robot.dof)
            q0 = np.clip(q0, self.robot.q_min, self.robot.q_max)
        R_ee, p_ee, tw = ee_state(self.robot, q0, np.zeros(self.robot.dof))

        centers = None
        wiped = np.zeros(0, dtype=np.uint8)
        if self.kind == TaskKind.PATH_FOLLOWING:
            scene = SceneParams(scene=SceneKind.FREE_SPACE)
            self._via = ViaPointTracker(np.asarray(cfg.via_points), cfg.threshold)
        elif self.kind == TaskKind.DOOR_OPENING:
            hinge = p_ee + np.asarray(cfg.hinge_from_ee)
            door = replace(cfg.door, hinge_pos=hinge,
                           handle_door=-np.asarray(cfg.hinge_from_ee))
            scene = SceneParams(scene=SceneKind.DOOR, door=door,
                                collision_plane_z=cfg.floor_z)
            self._door_params = door
        else:
            mu = float(rng.uniform(cfg.mu_range[0], cfg.mu_range[1]))
            contact = replace(cfg.contact, mu=mu)
            scene = SceneParams(scene=SceneKind.TABLE, contact=contact, tool=cfg.tool,
                                collision_plane_z=contact.plane_height)
            blob = stain_blob(rng, cfg.grid_nx, cfg.grid_ny, cfg.stain_cells)
            xs, ys = self._grid_xy
            centers = np.array([(xs[i], ys[j]) for i, j in blob])
            wiped = np.zeros(len(blob), dtype=np.uint8)
            self._blob = blob
            self._mu = mu

        self._state = WorldState(q=q0, qd=np.zeros(self.robot.dof), wiped=wiped)
        self._sim = TickSimulator(self.robot, self.control, scene, centers)
        self._prev_sp = _hold_kernel(self.pk, self.cc, q0, p_ee,
                                     np.ascontiguousarray(R_ee))
        self._tick = 0
        self._done = False
        self._completed_tick = None
        self._force_sum = 0.0
        self._force_substeps = 0
        self._result = EpisodeResult()
        return self._observe(R_ee, p_ee, tw)

    def step(self, raw_action) -> tuple[Observation, RewardBreakdown, bool, EpisodeResult]:
        if self._done:
            raise RuntimeError("episode already finished; call reset")
        cfg = self.cfg
        state = self._state
        raw = np.asarray(raw_action, dtype=np.float64).reshape(-1)
        if raw.shape[0] != self.action_dim:
            raise ValueError(f"expected action of length {self.action_dim}, got {raw.shape[0]}")

        R_ee, p_ee, tw = ee_state(self.robot, state.q, state.qd)
        prev_gap = abs(state.door_angle - cfg.theta_goal) \
            if self.kind == TaskKind.DOOR_OPENING else 0.0
        nxt = _decode_kernel(self.pk, self.cc, raw, state.q, state.qd, p_ee,
                             np.ascontiguousarray(R_ee))
        res = self._sim.run_tick(state, self._prev_sp, nxt)
        self._prev_sp = nxt
        self._tick += 1
        _check_finite(state)

        R_ee, p_ee, tw = ee_state(self.robot, state.q, state.qd)
        mean_force = res.force_sum / res.contact_substeps if res.contact_substeps else 0.0
        terminated = False
        reason = "running"

        if self.kind == TaskKind.PATH_FOLLOWING:
            newly = self._via.update(p_ee)
            completed_now = self._via.all_checked and self._completed_tick is None
            if completed_now:
                self._completed_tick = self._tick
            comps = path_reward_components(
                newly, self._via.distance_to_next(p_ee), self._via.all_checked,
                completed_now, cfg.horizon - self._tick, res.energy, cfg)
            success = float(self._via.checked.sum()) / len(self._via.checked)
        elif self.kind == TaskKind.DOOR_OPENING:
            new_gap = abs(state.door_angle - cfg.theta_goal)
            comps = door_reward_components(prev_gap, new_gap, mean_force,
                                           res.limit_hit, res.collision, cfg)
            if res.limit_hit:
                terminated, reason = True, "joint_limit"
            elif res.collision:
                terminated, reason = True, "collision"
            success = door_success(state.door_angle, cfg.theta_goal)
        else:
            all_wiped_now = bool(state.wiped.all()) and state.wiped.size > 0 \
                and self._completed_tick is None
            if all_wiped_now:
                self._completed_tick = self._tick
            comps = wiping_reward_components(
                res.newly_wiped, all_wiped_now, res.contact_substeps > 0,
                mean_force, res.limit_hit, res.collision, cfg)
            if res.limit_hit:
                terminated, reason = True, "joint_limit"
            elif res.collision:
                terminated, reason = True, "collision"
            elif bool(state.wiped.all()):
                terminated, reason = True, "all_wiped"
            success = float(state.wiped.sum()) / state.wiped.size

        breakdown = RewardBreakdown(components=comps)
        if self._tick >= cfg.horizon and not terminated:
            terminated, reason = True, "horizon"
        self._done = terminated

        r = self._result
        r.ticks = self._tick
        r.total_reward += breakdown.total
        r.energy += res.energy
        self._force_sum += res.force_sum
        self._force_substeps += res.contact_substeps
        r.mean_force = self._force_sum / self._force_substeps if self._force_substeps else 0.0
        r.max_force = max(r.max_force, res.force_max)
        r.success = success
        r.termination = reason if terminated else "running"
        return self._observe(R_ee, p_ee, tw), breakdown, terminated, r

    # -- observations -------------------------------------------------------

    def _observe(self, R_ee, p_ee, tw) -> Observation:
        base = [("ee_pos", 3), ("ee_rot6", 6), ("ee_linvel", 3), ("ee_angvel", 3)]
        parts = [p_ee, rot6(R_ee), tw[:3], tw[3:]]
        if self.kind == TaskKind.PATH_FOLLOWING:
            n_via = len(self._via.points)
            parts += [self._via.points.reshape(-1), self._via.checked.astype(np.float64)]
            base += [("via_points", 3 * n_via), ("via_checked", n_via)]
        elif self.kind == TaskKind.DOOR_OPENING:
            parts += [np.array([self._state.door_angle, self._state.door_vel])]
            base += [("door_state", 2)]
        else:
            grid = np.zeros((self.cfg.grid_nx, self.cfg.grid_ny))
            unwiped = self._blob[self._state.wiped == 0]
            grid[unwiped[:, 0], unwiped[:, 1]] = 1.0
            parts += [grid.reshape(-1)]
            base += [("stain_grid", self.cfg.grid_nx * self.cfg.grid_ny)]
        vec = np.concatenate(parts)
        if not np.all(np.isfinite(vec)):
            raise RuntimeError("non-finite observation")
        return Observation(vector=vec, layout=tuple(base))

    @property
    def done(self) -> bool:
        return self._done

    @property
    def state(self) -> WorldState:
        return self._state

    @property
    def result(self) -> EpisodeResult:
        return self._result


def success_metric(kind: TaskKind, result: EpisodeResult) -> float:
    """Per-task success fraction in [0, 1] from episode aggregates."""
    if result.ticks == 0:
        return 0.0
    return float(np.clip(result.success, 0.0, 1.0))


def make_env(kind: TaskKind, robot: RobotModel, control: ControllerConfig,
             task_cfg: TaskConfig | None = None,
             start_q: np.ndarray | None = None) -> TaskEnv:
    cfg = default_task_config(kind) if task_cfg is None else task_cfg
    return TaskEnv(cfg, robot, control, start_q=start_q)
