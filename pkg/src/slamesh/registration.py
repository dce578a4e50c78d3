"""Point-to-mesh registration of a reconstructed scan against the mesh map.

Scan vertices are associated with map vertices at the identical grid
location (same cell, or cells offset along the prediction axis), each pair
gives the residual ``n . (T v_p - v_q)`` along the map's smoothed normal, and
the pose correction is found by Levenberg-Marquardt on the sum of squares.

Every constraint, raw or combined, is stored through the sufficient
statistics ``M = mean(v_p n^T)``, ``mean(n)`` and ``mean(n . v_q)``; the
residual and Jacobian at any pose are then exact averages of the members'.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateProblem, InvalidParam, NoOverlap
from .geometry import Pose, compose, se3_exp, skew, transform_points
from .gp import GpConfig, Layer, reconstruct_cells
from .io import CellIndex, RawScan, assign_to_cells
from .mesh import ensure_normals, stack_points

RANK_TOL = 1e-10


@dataclass(frozen=True)
class RegistrationConfig:
    query_schedule: tuple = (2, 0)
    lm_max_iters: int = 20
    lm_tolerance: float = 1e-6
    combine: bool = True
    sigma_match_sq: float = 0.5
    count_weighting: bool = False
    huber_scale: float | None = None
    fallback_b: int = 3
    # extra outer iterations at the last query length until the update is below outer_tolerance
    refine_iters: int = 4
    outer_tolerance: float = 1e-5
    max_association_age: int | None = None
    # scan layers whose inputs span less than about one grid pitch across (smallest principal
    # standard deviation, meters) extrapolate a whole cell from a strip and are skipped
    min_scan_spread: float = 0.08

    def __post_init__(self):
        sched = tuple(int(b) for b in self.query_schedule)
        if not sched or min(sched) < 0:
            raise InvalidParam("query_schedule must be non-empty with b >= 0")
        object.__setattr__(self, "query_schedule", sched)
        if self.lm_max_iters < 1 or not self.lm_tolerance > 0:
            raise InvalidParam("invalid LM settings")


@dataclass
class Correspondence:
    scan_point: np.ndarray
    map_point: np.ndarray
    normal: np.ndarray
    layer_id: tuple


@dataclass
class Correspondences:
    """Array-backed list of correspondences; ``group[i]`` indexes ``layer_ids``."""

    scan_points: np.ndarray
    map_points: np.ndarray
    normals: np.ndarray
    group: np.ndarray
    layer_ids: list = field(default_factory=list)

    def __len__(self):
        return len(self.group)

    def __getitem__(self, i) -> Correspondence:
        return Correspondence(
            self.scan_points[i], self.map_points[i], self.normals[i], self.layer_ids[self.group[i]]
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @classmethod
    def from_list(cls, corrs: Sequence[Correspondence]) -> Correspondences:
        ids: dict = {}
        group = [ids.setdefault(c.layer_id, len(ids)) for c in corrs]
        if not corrs:
            z = np.zeros((0, 3))
            return cls(z, z.copy(), z.copy(), np.zeros(0, dtype=np.int64), [])
        return cls(
            np.array([c.scan_point for c in corrs], dtype=np.float64),
            np.array([c.map_point for c in corrs], dtype=np.float64),
            np.array([c.normal for c in corrs], dtype=np.float64),
            np.array(group, dtype=np.int64),
            list(ids),
        )


@dataclass
class CombinedConstraint:
    layer_id: tuple
    count: int
    mean_normal: np.ndarray
    mean_nq: float
    mean_vn: np.ndarray
    mean_scan_point: np.ndarray


@dataclass
class ConstraintSet:
    """Stacked sufficient statistics, one row per (raw or combined) constraint."""

    M: np.ndarray
    mean_n: np.ndarray
    mean_nq: np.ndarray
    counts: np.ndarray

    def __len__(self):
        return len(self.counts)

    @classmethod
    def raw(cls, corrs: Correspondences) -> ConstraintSet:
        return cls(
            np.einsum("ni,nj->nij", corrs.scan_points, corrs.normals),
            corrs.normals.copy(),
            np.einsum("ni,ni->n", corrs.normals, corrs.map_points),
            np.ones(len(corrs), dtype=np.int64),
        )

    @classmethod
    def combined(cls, constraints: Sequence[CombinedConstraint]) -> ConstraintSet:
        return cls(
            np.array([c.mean_vn for c in constraints]).reshape(-1, 3, 3),
            np.array([c.mean_normal for c in constraints]).reshape(-1, 3),
            np.array([c.mean_nq for c in constraints], dtype=np.float64),
            np.array([c.count for c in constraints], dtype=np.int64),
        )

    def evaluate(self, T: Pose) -> tuple[np.ndarray, np.ndarray]:
        """Residuals (K,) and left-perturbation Jacobian rows (K, 6) at ``T``."""
        A = np.einsum("ij,kjl->kil", T.R, self.M)
        e = np.einsum("kii->k", A) + self.mean_n @ T.t - self.mean_nq
        rot = np.stack(
            [A[:, 1, 2] - A[:, 2, 1], A[:, 2, 0] - A[:, 0, 2], A[:, 0, 1] - A[:, 1, 0]], axis=1
        )
        rot += np.cross(T.t, self.mean_n)
        return e, np.concatenate([rot, self.mean_n], axis=1)


def residual(c: Correspondence, T: Pose) -> float:
    vp = T.R @ np.asarray(c.scan_point, dtype=np.float64) + T.t
    return float(np.asarray(c.normal) @ (vp - np.asarray(c.map_point, dtype=np.float64)))


def residual_jacobian(c: Correspondence, T: Pose) -> np.ndarray:
    """d residual / d (rotation, translation) for a left-multiplied twist."""
    n = np.asarray(c.normal, dtype=np.float64)
    vp = T.R @ np.asarray(c.scan_point, dtype=np.float64) + T.t
    return np.concatenate([n @ (-skew(vp)), n])


def combine_constraints(corrs) -> list[CombinedConstraint]:
    """Average all correspondences of each scan layer into one constraint."""
    if not isinstance(corrs, Correspondences):
        corrs = Correspondences.from_list(list(corrs))
    if len(corrs) == 0:
        return []
    K = len(corrs.layer_ids)
    counts = np.bincount(corrs.group, minlength=K)
    order = np.argsort(corrs.group, kind="stable")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    vn = np.einsum("ni,nj->nij", corrs.scan_points, corrs.normals)[order]
    n = corrs.normals[order]
    nq = np.einsum("ni,ni->n", corrs.normals, corrs.map_points)[order]
    vp = corrs.scan_points[order]
    keep = counts > 0
    sums_vn = np.add.reduceat(vn, starts[keep], axis=0)
    sums_n = np.add.reduceat(n, starts[keep], axis=0)
    sums_nq = np.add.reduceat(nq, starts[keep])
    sums_vp = np.add.reduceat(vp, starts[keep], axis=0)
    out = []
    for j, k in enumerate(np.nonzero(keep)[0]):
        c = counts[k]
        out.append(
            CombinedConstraint(
                corrs.layer_ids[k], int(c), sums_n[j] / c, float(sums_nq[j] / c),
                sums_vn[j] / c, sums_vp[j] / c,
            )
        )
    return out


def _as_constraint_set(constraints) -> ConstraintSet:
    if isinstance(constraints, ConstraintSet):
        return constraints
    if isinstance(constraints, Correspondences):
        return ConstraintSet.raw(constraints)
    constraints = list(constraints)
    if constraints and isinstance(constraints[0], CombinedConstraint):
        return ConstraintSet.combined(constraints)
    return ConstraintSet.raw(Correspondences.from_list(constraints))


def _robust_weights(e: np.ndarray, base: np.ndarray, huber: float | None) -> np.ndarray:
    if huber is None:
        return base
    a = np.abs(e)
    return base * np.where(a <= huber, 1.0, huber / np.maximum(a, 1e-300))


def _cost(e, base, huber):
    if huber is None:
        return float(base @ (e * e))
    a = np.abs(e)
    rho = np.where(a <= huber, e * e, 2.0 * huber * a - huber * huber)
    return float(base @ rho)


def solve_lm(constraints, T_init: Pose | None = None, cfg: RegistrationConfig = RegistrationConfig(),
             stats: dict | None = None) -> Pose:
    """Levenberg-Marquardt on the sum of squared point-to-mesh residuals.

    Solves ``(H + lambda diag(H)) delta = -g`` and applies ``exp(delta)`` on
    the left. Raises DegenerateProblem if the normal matrix is rank deficient.
    """
    cs = _as_constraint_set(constraints)
    T = T_init if T_init is not None else Pose.identity()
    if len(cs) < 6:
        raise DegenerateProblem(f"only {len(cs)} constraints for 6 unknowns")
    base = cs.counts.astype(np.float64) if cfg.count_weighting else np.ones(len(cs))
    huber = cfg.huber_scale

    e, J = cs.evaluate(T)
    cost = _cost(e, base, huber)
    H0 = J.T @ (base[:, None] * J)
    d = np.sqrt(np.maximum(np.diag(H0), 0.0))
    if np.any(d == 0.0):
        raise DegenerateProblem("a pose direction has no constraint")
    ev = np.linalg.eigvalsh(H0 / np.outer(d, d))
    if ev[0] <= RANK_TOL * ev[-1]:
        raise DegenerateProblem(f"normal matrix is rank deficient (eigen ratio {ev[0] / ev[-1]:.2e})")

    lam = 1e-4
    iters = 0
    accepted = 0
    costs = [cost]
    while iters < cfg.lm_max_iters:
        iters += 1
        w = _robust_weights(e, base, huber)
        H = J.T @ (w[:, None] * J)
        g = J.T @ (w * e)
        A = H + lam * np.diag(np.diag(H))
        try:
            delta = np.linalg.solve(A, -g)
        except np.linalg.LinAlgError as exc:
            raise DegenerateProblem("damped normal matrix is singular") from exc
        step = float(np.linalg.norm(delta))
        if step < cfg.lm_tolerance:
            break
        T_new = compose(se3_exp(delta), T)
        e_new, J_new = cs.evaluate(T_new)
        cost_new = _cost(e_new, base, huber)
        if cost_new < cost:
            T, e, J, cost = T_new, e_new, J_new, cost_new
            lam = max(lam * 0.1, 1e-12)
            accepted += 1
            costs.append(cost)
        else:
            lam *= 10.0
            if lam > 1e12:
                break
    if stats is not None:
        stats.update(iterations=iters, accepted=accepted, final_cost=cost, costs=costs)
    return T


def _search_offsets(b: int) -> list[int]:
    out = [0]
    for k in range(1, b + 1):
        out += [-k, k]
    return out


def associate(scan_layers: Sequence[Layer], mesh_map, b: int, cfg: RegistrationConfig = RegistrationConfig(),
              sensor=None, frame_index: int | None = None) -> Correspondences:
    """Pair valid scan vertices with map vertices at the identical grid location.

    Candidate map layers share the scan layer's axis and sit in the same
    cell or up to ``b`` cells away along that axis. Each scan layer keeps the
    one candidate layer with the smallest mean gap along the axis over the
    jointly valid vertices (ties go to the smaller offset); a map vertex must
    be valid and have a valid incident face. Scan layers regressed from a narrow
    strip of inputs (``spread < cfg.min_scan_spread``) are skipped: a line or
    sliver of points leaves the surface free to turn about it. Raises NoOverlap if
    nothing matches.
    """
    sig = cfg.sigma_match_sq
    layers = [l for l in scan_layers if (l.variances < sig).any() and l.spread >= cfg.min_scan_spread]
    if not layers:
        raise NoOverlap("scan has no valid vertices")
    min_frame = None
    if cfg.max_association_age is not None and frame_index is not None:
        min_frame = frame_index - cfg.max_association_age
    S_pred = np.stack([l.predictions for l in layers])
    S_valid = np.stack([l.variances < sig for l in layers])
    n = len(layers)
    best_gap = np.full(n, np.inf)
    best: list = [None] * n
    cells = [l.cell for l in layers]
    for o in _search_offsets(b):
        idx, cands = [], []
        for i, layer in enumerate(layers):
            c = cells[i]
            ax = layer.axis
            key = CellIndex(c[0] + o * (ax == 0), c[1] + o * (ax == 1), c[2] + o * (ax == 2))
            m = mesh_map.get_layer(key, ax)
            if m is None or (min_frame is not None and m.last_frame < min_frame):
                continue
            idx.append(i)
            cands.append(m)
        if not cands:
            continue
        ensure_normals(cands, sig)
        ok = S_valid[idx] & np.stack([(m.variances < sig) & m._normals[2] for m in cands])
        cnt = ok.sum(axis=(1, 2))
        gap = np.abs(S_pred[idx] - np.stack([m.predictions for m in cands]))
        with np.errstate(invalid="ignore", divide="ignore"):
            mean_gap = np.where(cnt > 0, (gap * ok).sum(axis=(1, 2)) / cnt, np.inf)
        for j, i in enumerate(idx):
            if mean_gap[j] < best_gap[i]:
                best_gap[i] = mean_gap[j]
                best[i] = (cands[j], ok[j])
    chosen = [i for i in range(n) if best[i] is not None]
    if not chosen:
        raise NoOverlap(f"no correspondences with query length b={b}")
    mlayers = [best[i][0] for i in chosen]
    ok = np.stack([best[i][1] for i in chosen])
    P = stack_points([layers[i] for i in chosen])[ok]
    Q = stack_points(mlayers)[ok]
    N = np.stack([m._normals[1] for m in mlayers])[ok]
    group = np.repeat(np.arange(len(chosen)), ok.sum(axis=(1, 2)))
    corrs = Correspondences(P, Q, N, group, [layers[i].key for i in chosen])
    if sensor is not None:
        flip = np.einsum("ni,ni->n", corrs.normals, np.asarray(sensor) - corrs.map_points) < 0
        corrs.normals[flip] *= -1.0
    return corrs


def reconstruct_scan(points_sensor: np.ndarray, T: Pose, cell_size: float, gp_cfg: GpConfig,
                     executor=None) -> list[Layer]:
    """Transform a sensor-frame scan by ``T``, bucket it, and run GP per cell."""
    world = transform_points(T, points_sensor)
    cells = assign_to_cells(world, cell_size)
    return reconstruct_cells(cells, gp_cfg, cell_size, executor)


def register_scan(raw_scan, mesh_map, T_guess: Pose, cfg: RegistrationConfig = RegistrationConfig(),
                  gp_cfg: GpConfig = GpConfig(), executor=None, frame_index: int | None = None):
    """Align a sensor-frame scan to the map starting from ``T_guess``.

    Runs one outer iteration per entry of ``cfg.query_schedule`` (re-reconstruct
    at the current estimate, associate, solve), then up to ``cfg.refine_iters``
    more at the last query length while the update exceeds ``outer_tolerance``.
    Returns the pose and a stats dict; ``stats["layers"]`` holds the scan
    layers of the last outer iteration, reconstructed at ``stats["layers_pose"]``.
    """
    pts = raw_scan.points if isinstance(raw_scan, RawScan) else np.asarray(raw_scan).reshape(-1, 3)
    if mesh_map.is_empty():
        raise NoOverlap("map is empty")
    T = T_guess
    stats = {"outer": [], "raw_correspondences": 0, "combined_constraints": 0,
             "timing": {"reconstruct": 0.0, "associate": 0.0, "solve": 0.0}}
    schedule = list(cfg.query_schedule)
    plan = schedule + [schedule[-1]] * cfg.refine_iters
    for k, b in enumerate(plan):
        if k >= len(schedule):
            last = stats["outer"][-1]
            if max(last["dt"], last["dr"]) < cfg.outer_tolerance:
                break
        t0 = time.perf_counter()
        layers = reconstruct_scan(pts, T, mesh_map.cell_size, gp_cfg, executor)
        t1 = time.perf_counter()
        try:
            corrs = associate(layers, mesh_map, b, cfg, sensor=T.t, frame_index=frame_index)
        except NoOverlap:
            corrs = associate(layers, mesh_map, max(b, cfg.fallback_b), cfg, sensor=T.t,
                              frame_index=frame_index)
        t2 = time.perf_counter()
        if cfg.combine:
            combined = combine_constraints(corrs)
            constraints = ConstraintSet.combined(combined)
        else:
            constraints = ConstraintSet.raw(corrs)
        lm_stats: dict = {}
        dT = solve_lm(constraints, Pose.identity(), cfg, lm_stats)
        t3 = time.perf_counter()
        stats["timing"]["reconstruct"] += t1 - t0
        stats["timing"]["associate"] += t2 - t1
        stats["timing"]["solve"] += t3 - t2
        stats["layers"] = layers
        stats["layers_pose"] = T
        T = compose(dT, T)
        stats["raw_correspondences"] = len(corrs)
        stats["combined_constraints"] = len(constraints)
        stats["outer"].append({
            "b": b, "raw": len(corrs), "constraints": len(constraints),
            "iterations": lm_stats["iterations"], "final_cost": lm_stats["final_cost"],
            "dt": float(np.linalg.norm(dT.t)),
            "dr": math.acos(max(-1.0, min(1.0, 0.5 * (np.trace(dT.R) - 1.0)))),
        })
    stats["final_cost"] = stats["outer"][-1]["final_cost"]
    stats["iterations"] = sum(o["iterations"] for o in stats["outer"])
    return T, stats
