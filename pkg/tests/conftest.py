import numpy as np
import pytest

from armbench.model import LinkSpec, Pose, RobotModel, bundled_robot

TINY_INERTIA = np.eye(3) * 1e-12


def _limits(n, lo=-3.0, hi=3.0):
    return dict(
        q_min=np.full(n, lo), q_max=np.full(n, hi),
        qd_max=np.full(n, 5.0), tau_max=np.full(n, 200.0),
    )


def point_mass_link(axis, offset=(0.0, 0.0, 0.0), mass=1.0, com=(1.0, 0.0, 0.0), parent=-1):
    return LinkSpec(parent=parent, origin=Pose(np.eye(3), offset), axis=np.asarray(axis, float),
                    mass=mass, com=np.asarray(com, float), inertia=TINY_INERTIA)


@pytest.fixture(scope="session")
def one_joint_z():
    """Single revolute joint about z, 1 m link along x, unit point mass at the tip."""
    return RobotModel(
        name="one_joint_z",
        links=(point_mass_link([0, 0, 1]),),
        ee_offset=Pose(np.eye(3), [1.0, 0.0, 0.0]),
        gravity=np.zeros(3),
        **_limits(1),
    )


@pytest.fixture(scope="session")
def pendulum_y():
    """Unit point mass 1 m along x, rotating about the horizontal y axis."""
    return RobotModel(
        name="pendulum_y",
        links=(point_mass_link([0, 1, 0]),),
        ee_offset=Pose(np.eye(3), [1.0, 0.0, 0.0]),
        gravity=np.array([0.0, 0.0, -9.81]),
        **_limits(1),
    )


@pytest.fixture(scope="session")
def planar_two_link():
    """Two unit links along x with unit point masses at the tips, both joints about z."""
    return RobotModel(
        name="planar_two_link",
        links=(
            point_mass_link([0, 0, 1]),
            point_mass_link([0, 0, 1], offset=(1.0, 0.0, 0.0), parent=0),
        ),
        ee_offset=Pose(np.eye(3), [1.0, 0.0, 0.0]),
        gravity=np.zeros(3),
        **_limits(2),
    )


@pytest.fixture(scope="session")
def arm_a():
    return bundled_robot("arm_a")


@pytest.fixture(scope="session")
def arm_b():
    return bundled_robot("arm_b")


def random_q(model, rng, margin=0.1):
    lo = model.q_min + margin
    hi = model.q_max - margin
    return lo + (hi - lo) * rng.random(model.dof)
