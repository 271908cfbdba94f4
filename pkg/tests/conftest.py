import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from locbench.geometry import CameraIntrinsics, Pose, axis_angle_quaternion  # noqa: E402
from locbench.synthetic import reference_scene  # noqa: E402


@pytest.fixture(scope="session")
def scene():
    return reference_scene()


@pytest.fixture(scope="session")
def intr():
    return CameraIntrinsics(640, 480, 450.0, 450.0, 320.0, 240.0)


def random_pose(rng, spread=5.0):
    axis = rng.normal(size=3)
    q = axis_angle_quaternion(axis, rng.uniform(0, np.pi))
    return Pose(rng.uniform(-spread, spread, 3), q)


def points_in_front(rng, pose, n, depth=(4.0, 12.0), half_width=0.5):
    """World points that project into a 640x480, f=450 image of ``pose``."""
    z = rng.uniform(*depth, n)
    x = rng.uniform(-half_width, half_width, n) * z
    y = rng.uniform(-half_width * 0.75, half_width * 0.75, n) * z
    local = np.column_stack([x, y, z])
    return local @ pose.rotation + pose.position


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
