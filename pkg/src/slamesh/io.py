"""Point-cloud ingestion, voxel bucketing, and mesh / trajectory file formats."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import FormatError, InvalidMesh, InvalidParam, IoError
from .geometry import Pose

_OFF = 1 << 20
_MASK = (1 << 21) - 1


class CellIndex(NamedTuple):
    """Integer voxel coordinates; tuple ordering gives the lexicographic order."""

    ix: int
    iy: int
    iz: int


@dataclass
class RawScan:
    points: np.ndarray
    frame_index: int = 0
    timestamp: float | None = None
    dropped: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise InvalidParam("scan points must be finite")
        self.points = pts

    def __len__(self):
        return len(self.points)


def encode_keys(idx: np.ndarray) -> np.ndarray | None:
    """Pack (N, 3) integer indices into order-preserving int64 keys.

    Returns None when an index falls outside the packable range.
    """
    if len(idx) and (idx.min() < -_OFF or idx.max() >= _OFF):
        return None
    s = idx.astype(np.int64) + _OFF
    return (s[:, 0] << 42) | (s[:, 1] << 21) | s[:, 2]


def decode_key(key: int) -> CellIndex:
    key = int(key)
    return CellIndex(
        ((key >> 42) & _MASK) - _OFF, ((key >> 21) & _MASK) - _OFF, (key & _MASK) - _OFF
    )


def _group_indices(idx: np.ndarray):
    """Yield (unique index row, member positions in input order), sorted lexicographically."""
    keys = encode_keys(idx)
    if keys is None:
        uniq, inverse = np.unique(idx, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
    else:
        ukeys, inverse = np.unique(keys, return_inverse=True)
        uniq = None
    order = np.argsort(inverse, kind="stable")
    counts = np.bincount(inverse)
    splits = np.split(order, np.cumsum(counts)[:-1])
    for g, members in enumerate(splits):
        if uniq is not None:
            cell = CellIndex(*(int(v) for v in uniq[g]))
        else:
            cell = decode_key(ukeys[g])
        yield cell, members


def read_kitti_bin(path, frame_index: int = 0) -> RawScan:
    """Read a KITTI Velodyne scan: little-endian float32 records (x, y, z, reflectance)."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if len(data) % 16:
        raise FormatError(f"{path}: length {len(data)} is not a multiple of 16")
    arr = np.frombuffer(data, dtype="<f4").reshape(-1, 4)[:, :3].astype(np.float64)
    arr = arr[np.all(np.isfinite(arr), axis=1)]
    return RawScan(arr, frame_index=frame_index)


def write_kitti_bin(points, path, reflectance: float = 0.0) -> None:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rec = np.empty((len(pts), 4), dtype="<f4")
    rec[:, :3] = pts
    rec[:, 3] = reflectance
    try:
        Path(path).write_bytes(rec.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_ply_points(path, frame_index: int = 0) -> RawScan:
    from plyfile import PlyData

    try:
        ply = PlyData.read(str(path))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except Exception as exc:
        raise FormatError(f"{path}: {exc}") from exc
    v = ply["vertex"]
    arr = np.column_stack([np.asarray(v[k], dtype=np.float64) for k in ("x", "y", "z")])
    arr = arr[np.all(np.isfinite(arr), axis=1)]
    return RawScan(arr.reshape(-1, 3), frame_index=frame_index)


def write_ply_points(points, path) -> None:
    from plyfile import PlyData, PlyElement

    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rec = np.empty(len(pts), dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4")])
    rec["x"], rec["y"], rec["z"] = pts.T
    try:
        PlyData([PlyElement.describe(rec, "vertex")], byte_order="<").write(str(path))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


_NUM = re.compile(r"(\d+)")


def list_frames(directory, fmt: str) -> list[Path]:
    """Numbered scan files of a sequence directory, in numeric order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise IoError(f"input directory {directory} does not exist")
    ext = {"kitti-bin": ".bin", "ply-dir": ".ply"}.get(fmt)
    if ext is None:
        raise InvalidParam(f"unknown input format {fmt!r}")
    files = [p for p in directory.iterdir() if p.suffix == ext and _NUM.search(p.stem)]

    def num(p):
        return int(_NUM.findall(p.stem)[-1])

    return sorted(files, key=lambda p: (num(p), p.name))


def read_frame(path, fmt: str, frame_index: int = 0) -> RawScan:
    if fmt == "kitti-bin":
        return read_kitti_bin(path, frame_index)
    return read_ply_points(path, frame_index)


def range_filter(points: np.ndarray, min_range: float, max_range: float) -> np.ndarray:
    r = np.linalg.norm(points, axis=1)
    return points[(r >= min_range) & (r <= max_range)]


def downsample(scan: RawScan, res: float, mode: str = "first") -> RawScan:
    """Keep one point per ``res``-sized voxel.

    ``mode="first"`` keeps the first point met in input order; ``"centroid"``
    replaces each voxel's points by their mean, ordered by first occurrence.
    """
    if not res > 0:
        raise InvalidParam(f"downsample resolution must be positive, got {res}")
    pts = scan.points
    if len(pts) == 0:
        return RawScan(pts.copy(), scan.frame_index, scan.timestamp, scan.dropped, dict(scan.meta))
    idx = np.floor(pts / res).astype(np.int64)
    keys = encode_keys(idx)
    if keys is None:
        _, first, inverse = np.unique(idx, axis=0, return_index=True, return_inverse=True)
    else:
        _, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    if mode == "first":
        out = pts[np.sort(first)]
    elif mode == "centroid":
        sums = np.zeros((len(first), 3))
        np.add.at(sums, inverse, pts)
        cents = sums / np.bincount(inverse)[:, None]
        out = cents[np.argsort(first, kind="stable")]
    else:
        raise InvalidParam(f"unknown downsample mode {mode!r}")
    return RawScan(out, scan.frame_index, scan.timestamp, scan.dropped, dict(scan.meta))


def assign_to_cells(points, cell_size: float) -> dict[CellIndex, np.ndarray]:
    """Bucket world-frame points into cubic cells by floor division.

    The returned dict iterates in sorted cell order; members keep input order.
    """
    if not cell_size > 0:
        raise InvalidParam(f"cell_size must be positive, got {cell_size}")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return {}
    idx = np.floor(pts / cell_size).astype(np.int64)
    return {cell: pts[members] for cell, members in _group_indices(idx)}


# --- meshes -----------------------------------------------------------------


def write_mesh_ply(mesh, path, mode: str = "binary") -> None:
    """Write a triangle mesh; per-vertex ``quality`` carries the GP variance."""
    from plyfile import PlyData, PlyElement

    if mode not in ("ascii", "binary"):
        raise InvalidParam(f"mode must be 'ascii' or 'binary', got {mode!r}")
    verts = np.asarray(mesh.vertices, dtype=np.float64).reshape(-1, 3)
    faces = np.asarray(mesh.faces, dtype=np.int64).reshape(-1, 3)
    var = np.asarray(mesh.variances, dtype=np.float64).reshape(-1)
    if len(faces) and (faces.min() < 0 or faces.max() >= len(verts)):
        raise InvalidMesh("face index out of range")
    vrec = np.empty(
        len(verts), dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("quality", "<f4")]
    )
    vrec["x"], vrec["y"], vrec["z"] = verts.T
    vrec["quality"] = var
    frec = np.empty(len(faces), dtype=[("vertex_indices", "i4", (3,))])
    frec["vertex_indices"] = faces
    ply = PlyData(
        [
            PlyElement.describe(vrec, "vertex"),
            PlyElement.describe(frec, "face", len_types={"vertex_indices": "u1"}),
        ],
        text=(mode == "ascii"),
        byte_order="<",
    )
    try:
        ply.write(str(path))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_mesh_ply(path):
    from plyfile import PlyData

    from .mesh import TriangleMesh

    try:
        ply = PlyData.read(str(path))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except Exception as exc:
        raise FormatError(f"{path}: {exc}") from exc
    v = ply["vertex"]
    verts = np.column_stack([np.asarray(v[k], dtype=np.float64) for k in ("x", "y", "z")])
    names = v.data.dtype.names
    var = np.asarray(v["quality"], dtype=np.float64) if "quality" in names else np.zeros(len(verts))
    faces = np.zeros((0, 3), dtype=np.int64)
    if "face" in ply:
        fdata = ply["face"].data
        if len(fdata):
            faces = np.stack([np.asarray(f, dtype=np.int64) for f in fdata["vertex_indices"]])
    return TriangleMesh(verts.reshape(-1, 3), faces.reshape(-1, 3), var)


# --- trajectories -----------------------------------------------------------


def _fmt(x: float) -> str:
    x = float(x)
    if x == 0.0:
        return "0"
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def write_trajectory_kitti(poses, path) -> None:
    """One line per pose: the upper 3x4 of [R|t], row-major."""
    lines = []
    for p in poses:
        m = p.matrix()[:3, :]
        lines.append(" ".join(_fmt(x) for x in m.reshape(-1)))
    try:
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_trajectory_kitti(path) -> list[Pose]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    poses = []
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        vals = line.split()
        if len(vals) != 12:
            raise FormatError(f"{path}:{n}: expected 12 numbers, got {len(vals)}")
        m = np.array([float(x) for x in vals]).reshape(3, 4)
        poses.append(Pose(m[:, :3], m[:, 3]))
    return poses


def write_trajectory_tum(poses, path, timestamps=None) -> None:
    """TUM format: ``timestamp tx ty tz qx qy qz qw``."""
    from scipy.spatial.transform import Rotation

    if timestamps is None:
        timestamps = range(len(poses))
    lines = []
    for ts, p in zip(timestamps, poses):
        q = Rotation.from_matrix(p.R).as_quat()
        lines.append(" ".join(_fmt(x) for x in (ts, *p.t, *q)))
    try:
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
