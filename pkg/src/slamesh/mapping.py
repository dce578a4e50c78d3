"""Global mesh map: hash-map cell storage and per-vertex layer fusion."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import GridMismatch, InvalidParam
from .gp import Layer
from .io import CellIndex

SCALAR_BYTES = 8
# amortized per-vertex share of layer/cell headers and the cached normal flag
VERTEX_OVERHEAD_BYTES = 8


@dataclass
class Cell:
    index: CellIndex
    layers: dict[int, Layer] = field(default_factory=dict)
    raw_points: int = 0


class MapStats(NamedTuple):
    cells: int
    layers: int
    vertices: int
    bytes: int


def fuse_layer(map_layer: Layer, scan_layer: Layer, sigma_update_sq: float = 1.0,
               literal: bool = False) -> Layer:
    """Fuse a new observation of a layer into the stored one (returns a new Layer).

    Per vertex, scan entries with variance >= ``sigma_update_sq`` are ignored,
    map entries above the threshold are replaced, and everything else is
    combined by inverse-variance weighting. With ``literal=True`` predictions
    are instead weighted by the accumulated variances themselves.
    """
    if (map_layer.cell != scan_layer.cell or map_layer.axis != scan_layer.axis
            or map_layer.predictions.shape != scan_layer.predictions.shape
            or map_layer.cell_size != scan_layer.cell_size):
        raise GridMismatch(f"cannot fuse {scan_layer.key} into {map_layer.key}")
    fm, vm = map_layer.predictions, map_layer.variances
    fs, vs = scan_layer.predictions, scan_layer.variances
    use = vs < sigma_update_sq
    replace = use & ~(vm < sigma_update_sq)
    blend = use & ~replace

    with np.errstate(divide="ignore", invalid="ignore"):
        var = np.where(blend, 1.0 / (1.0 / vm + 1.0 / vs), vm)
        if literal:
            wm = map_layer.weights if map_layer.weights is not None else vm
            pred = np.where(blend, (fm * wm + fs * vs) / (wm + vs), fm)
            weights = np.where(blend, wm + vs, wm)
            weights = np.where(replace, vs, weights)
        else:
            pred = np.where(blend, (fm / vm + fs / vs) * var, fm)
            weights = None
    pred = np.where(replace, fs, pred)
    var = np.where(replace, vs, var)
    changed = bool(use.any())
    return Layer(
        map_layer.axis,
        map_layer.cell,
        map_layer.cell_size,
        pred,
        var,
        map_layer.observation_count + (1 if changed else 0),
        scan_layer.last_frame if changed else map_layer.last_frame,
        weights,
    )


class MeshMap:
    """Cells keyed by integer index in a dict (average O(1) lookup and insert)."""

    def __init__(self, cell_size: float = 1.6, n_grid: int = 6, sigma_match_sq: float = 0.5,
                 sigma_update_sq: float = 1.0, fusion: str = "precision"):
        if fusion not in ("precision", "literal"):
            raise InvalidParam(f"unknown fusion rule {fusion!r}")
        self.cell_size = cell_size
        self.n_grid = n_grid
        self.sigma_match_sq = sigma_match_sq
        self.sigma_update_sq = sigma_update_sq
        self.fusion = fusion
        self.cells: dict[CellIndex, Cell] = {}
        self._n_layers = 0

    def __len__(self):
        return len(self.cells)

    def get_layer(self, cell, axis: int) -> Layer | None:
        c = self.cells.get(cell)
        if c is None:
            return None
        return c.layers.get(axis)

    def layers(self):
        """All layers in sorted (cell index, axis) order."""
        for idx in sorted(self.cells):
            cell = self.cells[idx]
            for ax in sorted(cell.layers):
                yield cell.layers[ax]

    @property
    def n_layers(self) -> int:
        return self._n_layers

    def is_empty(self) -> bool:
        return self._n_layers == 0

    def add_raw_counts(self, counts: dict) -> None:
        for idx, n in counts.items():
            cell = self.cells.get(idx)
            if cell is None:
                cell = self.cells[idx] = Cell(CellIndex(*idx))
            cell.raw_points += n


def integrate_scan(mesh_map: MeshMap, scan_layers, frame_index: int | None = None) -> None:
    """Insert new layers and fuse layers already present; cells are never deleted."""
    literal = mesh_map.fusion == "literal"
    for layer in scan_layers:
        if layer.predictions.shape != (mesh_map.n_grid, mesh_map.n_grid):
            raise GridMismatch(f"layer grid {layer.predictions.shape} != map grid")
        if frame_index is not None:
            layer.last_frame = frame_index
        cell = mesh_map.cells.get(layer.cell)
        if cell is None:
            cell = mesh_map.cells[layer.cell] = Cell(layer.cell)
        old = cell.layers.get(layer.axis)
        if old is None:
            new = layer.copy()
            if literal:
                new.weights = new.variances.copy()
            cell.layers[layer.axis] = new
            mesh_map._n_layers += 1
        else:
            cell.layers[layer.axis] = fuse_layer(old, layer, mesh_map.sigma_update_sq, literal)


def map_stats(mesh_map: MeshMap) -> MapStats:
    vertices = 0
    for cell in mesh_map.cells.values():
        for layer in cell.layers.values():
            vertices += layer.predictions.size
    cells = sum(1 for c in mesh_map.cells.values() if c.layers)
    nbytes = vertices * (SCALAR_BYTES * 2 + VERTEX_OVERHEAD_BYTES)
    return MapStats(cells, mesh_map.n_layers, vertices, nbytes)
