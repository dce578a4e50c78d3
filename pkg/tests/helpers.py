"""Small builders shared by the unit tests."""

import numpy as np

from slamesh.gp import LOCATION_AXES, Layer
from slamesh.io import CellIndex


def plane_layer(cell=(0, 0, 0), axis=2, fn=None, variance=0.1, cell_size=1.6, g=6):
    """Layer whose predictions follow ``fn(u, w)`` over the world grid locations."""
    layer = Layer(axis, CellIndex(*cell), cell_size, np.zeros((g, g)), np.full((g, g), float(variance)))
    gu, gw = layer.grid_coords()
    U, W = np.meshgrid(gu, gw, indexing="ij")
    if fn is None:
        value = (cell[axis] + 0.5) * cell_size
        fn = lambda u, w: np.full_like(u, value)
    layer.predictions = np.asarray(fn(U, W), dtype=float)
    return layer


def location_axes(axis):
    return LOCATION_AXES[axis]


def three_plane_points(spacing=0.2, extent=8.0):
    """Noise-free samples of three mutually orthogonal planes offset from cell borders."""
    s = np.arange(0.1, extent, spacing)
    a, b = (v.ravel() for v in np.meshgrid(s, s))
    floor = np.column_stack([a, b, np.full_like(a, 0.3)])
    wall_x = np.column_stack([np.full_like(a, 0.2), a, b])
    wall_y = np.column_stack([a, np.full_like(a, 0.25), b])
    return np.vstack([floor, wall_x, wall_y])


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def record(number, title, ok, detail):
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title} [{detail}]"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line
