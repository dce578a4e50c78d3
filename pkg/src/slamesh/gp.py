"""Per-cell Gaussian-process surface regression.

Each cell's points are regressed as a function ``coordinate = f(location)``
over one prediction axis; the two remaining coordinates form the 2-D
location plane. Predictions and variances are evaluated on a fixed g x g grid
that includes both cell borders, so neighbouring cells share border locations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParam, SingularSystem, TooFewPoints
from .io import CellIndex

X, Y, Z = 0, 1, 2
AXIS_NAMES = "XYZ"
# location axes per prediction axis, cyclic so that u x w points along +axis
LOCATION_AXES = {Z: (X, Y), X: (Y, Z), Y: (Z, X)}
AXIS_ORDER = (Z, X, Y)

_CHUNK = 32
_PAD = 8


@dataclass(frozen=True)
class GpConfig:
    n_grid: int = 6
    sigma_in_sq: float = 0.02
    kappa: float = 1.0
    min_points: int = 4
    max_points: int = 100
    axis_mode: str = "single"

    def __post_init__(self):
        if self.n_grid < 2:
            raise InvalidParam("n_grid must be >= 2")
        if not self.sigma_in_sq > 0 or not self.kappa > 0:
            raise InvalidParam("sigma_in_sq and kappa must be positive")
        if self.min_points < 1 or self.max_points < self.min_points:
            raise InvalidParam("need 1 <= min_points <= max_points")
        if self.axis_mode not in ("single", "full"):
            raise InvalidParam(f"unknown axis_mode {self.axis_mode!r}")


@dataclass(eq=False)
class Layer:
    """GP output for one prediction axis of one cell.

    ``predictions`` and ``variances`` are (g, g) arrays indexed by grid
    position (r, c) along the two location axes ``LOCATION_AXES[axis]``.
    """

    axis: int
    cell: CellIndex
    cell_size: float
    predictions: np.ndarray
    variances: np.ndarray
    observation_count: int = 1
    last_frame: int = 0
    weights: np.ndarray | None = None
    # smallest principal standard deviation of the input locations (meters)
    spread: float = math.inf
    _normals: np.ndarray | None = field(default=None, repr=False)

    @property
    def g(self) -> int:
        return self.predictions.shape[0]

    @property
    def key(self) -> tuple:
        return (self.cell, self.axis)

    @property
    def pitch(self) -> float:
        return self.cell_size / (self.g - 1)

    def grid_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """World coordinates of grid lines along the u and w location axes."""
        u_ax, w_ax = LOCATION_AXES[self.axis]
        steps = np.arange(self.g) * self.pitch
        return self.cell[u_ax] * self.cell_size + steps, self.cell[w_ax] * self.cell_size + steps

    def points(self) -> np.ndarray:
        """(g, g, 3) world positions of all vertices."""
        u_ax, w_ax = LOCATION_AXES[self.axis]
        gu, gw = self.grid_coords()
        out = np.empty((self.g, self.g, 3))
        out[:, :, u_ax] = gu[:, None]
        out[:, :, w_ax] = gw[None, :]
        out[:, :, self.axis] = self.predictions
        return out

    def valid(self, sigma_match_sq: float) -> np.ndarray:
        return self.variances < sigma_match_sq

    def copy(self) -> Layer:
        return Layer(
            self.axis,
            self.cell,
            self.cell_size,
            self.predictions.copy(),
            self.variances.copy(),
            self.observation_count,
            self.last_frame,
            None if self.weights is None else self.weights.copy(),
            self.spread,
        )


def kernel(i, j, kappa: float = 1.0) -> float:
    """Exponential kernel over Euclidean distance in the location plane."""
    d = np.linalg.norm(np.asarray(i, dtype=np.float64) - np.asarray(j, dtype=np.float64))
    return math.exp(-kappa * float(d))


def _pairwise_kernel(a: np.ndarray, b: np.ndarray, kappa: float) -> np.ndarray:
    """Batched kernel between (B, n, 2) and (B, m, 2) location sets."""
    diff = a[:, :, None, :] - b[:, None, :, :]
    return np.exp(-kappa * np.sqrt(np.einsum("bnmk,bnmk->bnm", diff, diff)))


def _gp_batch(locs, obs, mask, queries, sigma_in_sq, kappa):
    """Mean-centred GP posterior for a stack of independent problems.

    ``locs`` (B, n, 2), ``obs`` (B, n) and ``mask`` (B, n) describe padded
    inputs; padded entries are decoupled from the real ones and carry no
    information, so they leave the posterior untouched.
    """
    n = locs.shape[1]
    m = mask.astype(np.float64)
    counts = m.sum(axis=1)
    mean = (obs * m).sum(axis=1) / counts
    K = _pairwise_kernel(locs, locs, kappa) * (m[:, :, None] * m[:, None, :])
    diag = np.where(mask, sigma_in_sq, 1.0)
    K[:, np.arange(n), np.arange(n)] += diag
    Kq = _pairwise_kernel(locs, queries, kappa) * m[:, :, None]
    rhs = np.concatenate([Kq, ((obs - mean[:, None]) * m)[:, :, None]], axis=2)
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem("GP covariance is not positive definite") from exc
    S = np.linalg.solve(L, rhs)
    v, w = S[:, :, :-1], S[:, :, -1]
    pred = mean[:, None] + np.einsum("bnm,bn->bm", v, w)
    var = 1.0 - np.einsum("bnm,bnm->bm", v, v)
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(var))):
        raise SingularSystem("GP produced non-finite values")
    return pred, np.clip(var, 0.0, 1.0)


def gp_predict(inputs, observations, queries, cfg: GpConfig = GpConfig()):
    """Posterior mean and variance at ``queries`` given (location, observation) pairs.

    Observations are mean-centred before conditioning and the mean is added
    back, so a surface far from the origin is not shrunk toward zero.
    """
    locs = np.asarray(inputs, dtype=np.float64).reshape(-1, 2)
    f = np.asarray(observations, dtype=np.float64).reshape(-1)
    q = np.asarray(queries, dtype=np.float64).reshape(-1, 2)
    if len(locs) == 0 or len(locs) != len(f):
        raise InvalidParam("need at least one input with a matching observation")
    if len(locs) > cfg.max_points:
        raise InvalidParam(f"{len(locs)} inputs exceed max_points={cfg.max_points}")
    if len(q) == 0:
        raise InvalidParam("queries must be non-empty")
    if not (np.all(np.isfinite(locs)) and np.all(np.isfinite(f))):
        raise SingularSystem("non-finite GP input")
    mask = np.ones((1, len(locs)), dtype=bool)
    pred, var = _gp_batch(locs[None], f[None], mask, q[None], cfg.sigma_in_sq, cfg.kappa)
    return pred[0], var[0]


def select_axes(points, cfg: GpConfig, cell_size: float = 1.6) -> list[int]:
    """Choose which coordinate(s) to regress for one cell's points."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < cfg.min_points:
        raise TooFewPoints(f"{len(pts)} points < min_points={cfg.min_points}")
    if cfg.axis_mode == "single":
        var = pts.var(axis=0)
        best = AXIS_ORDER[0]
        for ax in AXIS_ORDER[1:]:
            if var[ax] < var[best]:
                best = ax
        return [best]
    chosen = []
    bin_size = cell_size / (cfg.n_grid - 1)
    for ax in AXIS_ORDER:
        u_ax, w_ax = LOCATION_AXES[ax]
        bins = np.floor(pts[:, [u_ax, w_ax]] / bin_size).astype(np.int64)
        _, inv = np.unique(bins, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        hi = np.full(inv.max() + 1, -np.inf)
        lo = np.full(inv.max() + 1, np.inf)
        np.maximum.at(hi, inv, pts[:, ax])
        np.minimum.at(lo, inv, pts[:, ax])
        if np.all(hi - lo < cell_size / 2):
            chosen.append(ax)
    return chosen


def _stride_cap(pts: np.ndarray, max_points: int) -> np.ndarray:
    if len(pts) <= max_points:
        return pts
    return pts[:: math.ceil(len(pts) / max_points)]


def _location_spread(loc: np.ndarray) -> float:
    """Smallest principal standard deviation of 2-D locations; 0 for collinear inputs."""
    if len(loc) < 2:
        return 0.0
    d = loc - loc.mean(axis=0)
    return math.sqrt(max(float(np.linalg.eigvalsh(d.T @ d / len(loc))[0]), 0.0))


def _grid_queries(g: int, cell_size: float) -> np.ndarray:
    steps = np.arange(g) * (cell_size / (g - 1))
    uu, ww = np.meshgrid(steps, steps, indexing="ij")
    return np.column_stack([uu.ravel(), ww.ravel()])


def _solve_tasks(tasks, cfg: GpConfig, cell_size: float, executor=None):
    """Run GP regressions for (cell, axis, points) tasks; returns Layers in task order.

    Tasks are grouped by padded input size and cut into fixed-size chunks, so
    the arithmetic done for each task does not depend on the worker count.
    """
    g = cfg.n_grid
    queries = _grid_queries(g, cell_size)
    by_size: dict[int, list[int]] = {}
    prepared = []
    for k, (cell, axis, pts) in enumerate(tasks):
        pts = _stride_cap(pts, cfg.max_points)
        u_ax, w_ax = LOCATION_AXES[axis]
        origin = np.array([cell[u_ax], cell[w_ax]], dtype=np.float64) * cell_size
        prepared.append((pts[:, [u_ax, w_ax]] - origin, pts[:, axis]))
        n_pad = max(_PAD, -(-len(pts) // _PAD) * _PAD)
        by_size.setdefault(n_pad, []).append(k)

    chunks = []
    for n_pad in sorted(by_size):
        ids = by_size[n_pad]
        for s in range(0, len(ids), _CHUNK):
            chunks.append((n_pad, ids[s : s + _CHUNK]))

    def run(chunk):
        n_pad, ids = chunk
        B = len(ids)
        locs = np.zeros((B, n_pad, 2))
        obs = np.zeros((B, n_pad))
        mask = np.zeros((B, n_pad), dtype=bool)
        for b, k in enumerate(ids):
            loc, f = prepared[k]
            locs[b, : len(f)] = loc
            obs[b, : len(f)] = f
            mask[b, : len(f)] = True
        qs = np.broadcast_to(queries, (B,) + queries.shape)
        return _gp_batch(locs, obs, mask, qs, cfg.sigma_in_sq, cfg.kappa)

    results = list(executor.map(run, chunks)) if executor is not None else [run(c) for c in chunks]
    layers: list[Layer | None] = [None] * len(tasks)
    for (_, ids), (pred, var) in zip(chunks, results):
        for b, k in enumerate(ids):
            cell, axis, _ = tasks[k]
            layers[k] = Layer(axis, cell, cell_size, pred[b].reshape(g, g), var[b].reshape(g, g),
                              spread=_location_spread(prepared[k][0]))
    return layers


def reconstruct_cell(cell_index, points, cfg: GpConfig, cell_size: float) -> list[Layer]:
    cell_index = CellIndex(*cell_index)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    axes = select_axes(pts, cfg, cell_size)
    return _solve_tasks([(cell_index, ax, pts) for ax in axes], cfg, cell_size)


def reconstruct_cells(cells: dict, cfg: GpConfig, cell_size: float, executor=None) -> list[Layer]:
    """Reconstruct every cell with enough points; output sorted by (cell, axis order)."""
    tasks = []
    for cell in sorted(cells):
        pts = cells[cell]
        if len(pts) < cfg.min_points:
            continue
        for ax in select_axes(pts, cfg, cell_size):
            tasks.append((cell, ax, pts))
    return _solve_tasks(tasks, cfg, cell_size, executor)
