"""Serial-chain robot models: link descriptions, limits, and YAML loading.

A model is an ordered chain of revolute links (parent index strictly below
child), an end-effector offset, joint/velocity/torque limits, and a gravity
vector.  Models are immutable after construction; the packed array form used
by the jitted dynamics kernels is cached on first access.
"""

from __future__ import annotations

import collections
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

GRAVITY_DEFAULT = (0.0, 0.0, -9.81)

# Array bundle consumed by the numba kernels (see spatial.py, engine.py).
PackedModel = collections.namedtuple(
    "PackedModel",
    [
        "n", "mass", "com", "inertia", "axis", "R_off", "p_off",
        "R_ee", "p_ee", "q_min", "q_max", "qd_max", "tau_max",
        "gravity", "link_radius",
    ],
)


def _ro(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(np.asarray(a, dtype=np.float64))
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Pose:
    """Rigid transform: 3x3 rotation matrix plus translation in meters."""

    R: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", _ro(np.asarray(self.R).reshape(3, 3)))
        object.__setattr__(self, "p", _ro(np.asarray(self.p).reshape(3)))

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.R @ other.R, self.p + self.R @ other.p)

    def transform_point(self, x: np.ndarray) -> np.ndarray:
        return self.p + self.R @ np.asarray(x, dtype=np.float64)

    def check_rotation(self, tol: float = 1e-9) -> None:
        err = np.max(np.abs(self.R @ self.R.T - np.eye(3)))
        if err > tol:
            raise ValueError(f"rotation not orthonormal (|RR^T - I| = {err:.3e})")
        if abs(np.linalg.det(self.R) - 1.0) > tol:
            raise ValueError("rotation determinant != 1")


@dataclass(frozen=True)
class Twist:
    """Spatial velocity: linear m/s, angular rad/s."""

    linear: np.ndarray
    angular: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "linear", _ro(np.asarray(self.linear).reshape(3)))
        object.__setattr__(self, "angular", _ro(np.asarray(self.angular).reshape(3)))


@dataclass(frozen=True)
class LinkSpec:
    """One revolute link: fixed parent transform, joint axis, inertial data.

    `origin` maps the parent link frame to the joint frame; the joint rotates
    about `axis` (unit vector, joint frame).  `com` and `inertia` (about the
    CoM) are expressed in the rotated link frame.
    """

    parent: int
    origin: Pose
    axis: np.ndarray
    mass: float
    com: np.ndarray
    inertia: np.ndarray
    collision_radius: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "axis", _ro(np.asarray(self.axis).reshape(3)))
        object.__setattr__(self, "com", _ro(np.asarray(self.com).reshape(3)))
        object.__setattr__(self, "inertia", _ro(np.asarray(self.inertia).reshape(3, 3)))
        if self.mass <= 0.0:
            raise ValueError("link mass must be positive")
        if abs(np.linalg.norm(self.axis) - 1.0) > 1e-12:
            raise ValueError("joint axis must be unit norm")
        if np.max(np.abs(self.inertia - self.inertia.T)) > 1e-12:
            raise ValueError("link inertia must be symmetric")
        if np.min(np.linalg.eigvalsh(self.inertia)) <= 0.0:
            raise ValueError("link inertia must be positive definite")
        self.origin.check_rotation(tol=1e-9)


@dataclass(frozen=True)
class RobotModel:
    """Immutable description of a serial revolute arm."""

    name: str
    links: tuple[LinkSpec, ...]
    ee_offset: Pose
    q_min: np.ndarray
    q_max: np.ndarray
    qd_max: np.ndarray
    tau_max: np.ndarray
    gravity: np.ndarray = field(default=GRAVITY_DEFAULT)
    home_q: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.links)
        for name in ("q_min", "q_max", "qd_max", "tau_max", "gravity"):
            object.__setattr__(self, name, _ro(np.asarray(getattr(self, name), dtype=np.float64)))
        if self.home_q is None:
            object.__setattr__(self, "home_q", _ro(np.zeros(n)))
        else:
            object.__setattr__(self, "home_q", _ro(np.asarray(self.home_q)))
        for name in ("q_min", "q_max", "qd_max", "tau_max", "home_q"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have length {n}")
        for i, link in enumerate(self.links):
            if link.parent != i - 1:
                raise ValueError("links must form a single serial chain (parent = index - 1)")
        if not np.all(self.q_min < self.q_max):
            raise ValueError("q_min must be elementwise below q_max")
        if not np.all(self.tau_max > 0.0):
            raise ValueError("torque limits must be positive")
        if not np.all(self.qd_max > 0.0):
            raise ValueError("velocity limits must be positive")
        self.ee_offset.check_rotation(tol=1e-9)

    @property
    def dof(self) -> int:
        return len(self.links)

    def check_q(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64).reshape(-1)
        if q.shape != (self.dof,):
            raise ValueError(f"expected joint vector of length {self.dof}, got {q.shape}")
        return q

    def packed(self) -> PackedModel:
        if not hasattr(self, "_packed"):
            n = self.dof
            mass = np.array([l.mass for l in self.links])
            com = np.stack([l.com for l in self.links])
            inertia = np.stack([l.inertia for l in self.links])
            axis = np.stack([l.axis for l in self.links])
            R_off = np.stack([l.origin.R for l in self.links])
            p_off = np.stack([l.origin.p for l in self.links])
            radius = np.array([l.collision_radius for l in self.links])
            pk = PackedModel(
                n=np.int64(n),
                mass=mass, com=com, inertia=inertia, axis=axis,
                R_off=R_off, p_off=p_off,
                R_ee=np.ascontiguousarray(self.ee_offset.R),
                p_ee=np.ascontiguousarray(self.ee_offset.p),
                q_min=np.ascontiguousarray(self.q_min),
                q_max=np.ascontiguousarray(self.q_max),
                qd_max=np.ascontiguousarray(self.qd_max),
                tau_max=np.ascontiguousarray(self.tau_max),
                gravity=np.ascontiguousarray(self.gravity),
                link_radius=radius,
            )
            object.__setattr__(self, "_packed", pk)
        return self._packed


def _rpy_to_matrix(rpy) -> np.ndarray:
    r, p, y = [float(v) for v in rpy]
    cr, sr = np.cos(r), np.sin(r)
    cp, sp = np.cos(p), np.sin(p)
    cy, sy = np.cos(y), np.sin(y)
    Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    Ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    Rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    return Rz @ Ry @ Rx


def _pose_from_dict(d: dict) -> Pose:
    xyz = d.get("xyz", (0.0, 0.0, 0.0))
    rpy = d.get("rpy", (0.0, 0.0, 0.0))
    return Pose(_rpy_to_matrix(rpy), np.asarray(xyz, dtype=np.float64))


def _inertia_from_entry(entry) -> np.ndarray:
    arr = np.asarray(entry, dtype=np.float64)
    if arr.shape == (3, 3):
        return arr
    if arr.shape == (6,):
        ixx, iyy, izz, ixy, ixz, iyz = arr
        return np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])
    raise ValueError("inertia must be a 3x3 matrix or [ixx, iyy, izz, ixy, ixz, iyz]")


def robot_from_dict(doc: dict) -> RobotModel:
    links = []
    for i, entry in enumerate(doc["links"]):
        links.append(LinkSpec(
            parent=int(entry.get("parent", i - 1)),
            origin=_pose_from_dict(entry),
            axis=np.asarray(entry["axis"], dtype=np.float64),
            mass=float(entry["mass"]),
            com=np.asarray(entry["com"], dtype=np.float64),
            inertia=_inertia_from_entry(entry["inertia"]),
            collision_radius=float(entry.get("collision_radius", 0.05)),
        ))
    limits = doc["limits"]
    return RobotModel(
        name=str(doc["name"]),
        links=tuple(links),
        ee_offset=_pose_from_dict(doc.get("ee_offset", {})),
        q_min=np.asarray(limits["q_min"], dtype=np.float64),
        q_max=np.asarray(limits["q_max"], dtype=np.float64),
        qd_max=np.asarray(limits["qd_max"], dtype=np.float64),
        tau_max=np.asarray(limits["tau_max"], dtype=np.float64),
        gravity=np.asarray(doc.get("gravity", GRAVITY_DEFAULT), dtype=np.float64),
        home_q=np.asarray(doc["home_q"], dtype=np.float64) if "home_q" in doc else None,
    )


def load_robot(path: str | Path) -> RobotModel:
    with open(path, "r") as fh:
        return robot_from_dict(yaml.safe_load(fh))


def bundled_robot(name: str) -> RobotModel:
    """Load one of the models shipped with the package (arm_a, arm_b)."""
    ref = resources.files("armbench") / "robots" / f"{name}.yaml"
    with ref.open("r") as fh:
        return robot_from_dict(yaml.safe_load(fh))


def bundled_robot_names() -> list[str]:
    root = resources.files("armbench") / "robots"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))
