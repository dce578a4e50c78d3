"""Triangle faces over layer grids, smoothed vertex normals, and mesh extraction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFace, NoValidFace
from .gp import LOCATION_AXES, Layer

DEGENERATE_EPS = 1e-12
MERGE_TOL = 1e-6


@dataclass(eq=False)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        self.variances = np.asarray(self.variances, dtype=np.float64).reshape(-1)
        self._normals = None

    @classmethod
    def empty(cls) -> TriangleMesh:
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), np.zeros(0))

    def face_normals(self) -> np.ndarray:
        if self._normals is None:
            v = self.vertices[self.faces]
            n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
            norm = np.linalg.norm(n, axis=1, keepdims=True)
            self._normals = np.divide(n, norm, out=np.zeros_like(n), where=norm > DEGENERATE_EPS)
        return self._normals

    def face_areas(self) -> np.ndarray:
        v = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)


def face_normal(v0, v1, v2) -> np.ndarray:
    v0, v1, v2 = (np.asarray(v, dtype=np.float64) for v in (v0, v1, v2))
    n = np.cross(v1 - v0, v2 - v0)
    norm = np.linalg.norm(n)
    if norm <= DEGENERATE_EPS:
        raise DegenerateFace("triangle has (near) zero area")
    return n / norm


def _square_triangles(g: int):
    """Grid-position index triples of both triangles of every grid square.

    Square (r, c) is split along (r, c)-(r+1, c+1); both triangles wind
    counter-clockwise seen from the +axis side.
    """
    r, c = np.meshgrid(np.arange(g - 1), np.arange(g - 1), indexing="ij")
    a = (r * g + c).ravel()
    b = ((r + 1) * g + c).ravel()
    cc = (r * g + c + 1).ravel()
    d = ((r + 1) * g + c + 1).ravel()
    tri = np.empty((2 * len(a), 3), dtype=np.int64)
    tri[0::2] = np.column_stack([a, b, d])
    tri[1::2] = np.column_stack([a, d, cc])
    return tri


def connect_layer(layer: Layer, sigma_match_sq: float) -> np.ndarray:
    """Faces (flattened grid indices r*g + c) whose three vertices are all valid."""
    tri = _square_triangles(layer.g)
    valid = layer.valid(sigma_match_sq).ravel()
    return tri[valid[tri].all(axis=1)]


def vertex_normals(layer: Layer, sigma_match_sq: float) -> tuple[np.ndarray, np.ndarray]:
    """Unit smoothed normal per vertex (pointing to +axis side) and a has-face mask.

    Each normal is the normalized sum of the raw cross products of the valid
    faces incident to the vertex. Cached on the layer until it is modified.
    """
    ensure_normals([layer], sigma_match_sq)
    _, normals, ok = layer._normals
    return normals, ok


def ensure_normals(layers, sigma_match_sq: float) -> None:
    """Fill the smoothed-normal cache of every layer lacking one, in one batch."""
    todo = [l for l in layers if l._normals is None or l._normals[0] != sigma_match_sq]
    if not todo:
        return
    P = stack_points(todo)
    V = np.stack([l.variances < sigma_match_sq for l in todo])
    acc = np.zeros_like(P)
    hits = np.zeros(V.shape, dtype=np.int64)
    a = P[:, :-1, :-1]
    d = P[:, 1:, 1:]
    # triangle (r,c)-(r+1,c)-(r+1,c+1)
    ok1 = V[:, :-1, :-1] & V[:, 1:, :-1] & V[:, 1:, 1:]
    n1 = np.cross(P[:, 1:, :-1] - a, d - a) * ok1[..., None]
    # triangle (r,c)-(r+1,c+1)-(r,c+1)
    ok2 = V[:, :-1, :-1] & V[:, 1:, 1:] & V[:, :-1, 1:]
    n2 = np.cross(d - a, P[:, :-1, 1:] - a) * ok2[..., None]
    for sl, n, ok in (
        ((slice(None), slice(None, -1), slice(None, -1)), n1, ok1),
        ((slice(None), slice(1, None), slice(None, -1)), n1, ok1),
        ((slice(None), slice(1, None), slice(1, None)), n1, ok1),
        ((slice(None), slice(None, -1), slice(None, -1)), n2, ok2),
        ((slice(None), slice(1, None), slice(1, None)), n2, ok2),
        ((slice(None), slice(None, -1), slice(1, None)), n2, ok2),
    ):
        acc[sl] += n
        hits[sl] += ok
    norm = np.linalg.norm(acc, axis=-1, keepdims=True)
    has = (hits > 0) & (norm[..., 0] > DEGENERATE_EPS)
    normals = np.divide(acc, norm, out=np.zeros_like(acc), where=has[..., None])
    for k, layer in enumerate(todo):
        layer._normals = (sigma_match_sq, normals[k], has[k])


def stack_points(layers) -> np.ndarray:
    """(L, g, g, 3) world vertex positions of equally-sized layers."""
    g = layers[0].g
    cs = layers[0].cell_size
    steps = np.arange(g) * (cs / (g - 1))
    cells = np.array([l.cell for l in layers], dtype=np.float64) * cs
    axes = np.array([l.axis for l in layers])
    out = np.empty((len(layers), g, g, 3))
    for ax, (u_ax, w_ax) in LOCATION_AXES.items():
        m = axes == ax
        if not m.any():
            continue
        out[m, :, :, u_ax] = cells[m, u_ax][:, None, None] + steps[None, :, None]
        out[m, :, :, w_ax] = cells[m, w_ax][:, None, None] + steps[None, None, :]
        out[m, :, :, ax] = np.stack([l.predictions for l, keep in zip(layers, m) if keep])
    return out


def smoothed_normal(layer: Layer, grid_position, sigma_match_sq: float, sensor=None) -> np.ndarray:
    """Smoothed normal at one vertex, flipped to face ``sensor`` when given."""
    r, c = grid_position
    if not layer.variances[r, c] < sigma_match_sq:
        raise NoValidFace(f"vertex {grid_position} is not valid")
    normals, ok = vertex_normals(layer, sigma_match_sq)
    if not ok[r, c]:
        raise NoValidFace(f"vertex {grid_position} has no valid incident face")
    n = normals[r, c].copy()
    if sensor is not None:
        v = layer.points()[r, c]
        if n @ (np.asarray(sensor, dtype=np.float64) - v) < 0:
            n = -n
    return n


def extract_mesh(mesh_map, sigma_match_sq: float | None = None) -> TriangleMesh:
    """Concatenate the valid vertices and faces of every layer into one mesh.

    Border vertices of same-axis layers that coincide within ``MERGE_TOL``
    are merged. Output order follows (cell index, axis, grid position).
    """
    if sigma_match_sq is None:
        sigma_match_sq = mesh_map.sigma_match_sq
    verts: list[np.ndarray] = []
    variances: list[float] = []
    faces: list[np.ndarray] = []
    border: dict[tuple, list[int]] = {}
    count = 0
    for layer in mesh_map.layers():
        g = layer.g
        valid = layer.valid(sigma_match_sq)
        if not valid.any():
            continue
        P = layer.points()
        u_ax, w_ax = LOCATION_AXES[layer.axis]
        base_u, base_w = layer.cell[u_ax] * (g - 1), layer.cell[w_ax] * (g - 1)
        index = np.full(g * g, -1, dtype=np.int64)
        for r, c in zip(*np.nonzero(valid)):
            p = P[r, c]
            on_border = r == 0 or c == 0 or r == g - 1 or c == g - 1
            if on_border:
                key = (layer.axis, base_u + r, base_w + c)
                cands = border.setdefault(key, [])
                match = next(
                    (i for i in cands if np.abs(verts[i] - p).max() <= MERGE_TOL), None
                )
                if match is not None:
                    index[r * g + c] = match
                    continue
                cands.append(count)
            verts.append(p)
            variances.append(float(layer.variances[r, c]))
            index[r * g + c] = count
            count += 1
        f = connect_layer(layer, sigma_match_sq)
        if len(f):
            faces.append(index[f])
    if not verts:
        return TriangleMesh.empty()
    return TriangleMesh(
        np.array(verts),
        np.concatenate(faces) if faces else np.zeros((0, 3), dtype=np.int64),
        np.array(variances),
    )
