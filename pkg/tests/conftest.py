import pytest

from helpers import three_plane_points
from slamesh.geometry import Pose
from slamesh.gp import GpConfig
from slamesh.mapping import MeshMap, integrate_scan
from slamesh.registration import reconstruct_scan


@pytest.fixture(scope="session")
def plane_points():
    return three_plane_points()


@pytest.fixture(scope="session")
def plane_map(plane_points):
    """Mesh map of the three-plane fixture at the identity pose (treat as read-only)."""
    m = MeshMap(1.6)
    integrate_scan(m, reconstruct_scan(plane_points, Pose.identity(), 1.6, GpConfig()))
    return m


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
