"""Segmentation-to-costmap navigation pipeline.

Ground-plane projection of a group label map through a homography,
discrete per-group costs, fusion with elevation costs, least-cost 8-connected
planning and trajectory metrics.

Pixel ``(row, col)`` covers ``[col, col+1) x [row, row+1)`` in image
coordinates ``(u, v)``; grid cell ``(r, c)`` has its centre at
``origin + ((c + 0.5) * cell_size, (r + 0.5) * cell_size)`` on the ground.
"""
from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, DataError, SingularSystemError
from .grouping import GroupMap
from .io import read_gtsr, write_gtsr

OBSTACLE = 1.0e6
UNKNOWN = -1

DEFAULT_COSTS = {
    "smooth": 0.0,
    "rough": 2.0,
    "bumpy": 5.0,
    "forbidden": "obstacle",
    "obstacle": "obstacle",
    "background": 8.0,
    "unknown": 8.0,
}

# 8-connected moves in a fixed order
MOVES = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


# --- homography ------------------------------------------------------------------


class Homography:
    """Nonsingular 3x3 projective map, normalised so ``m[2, 2] == 1``."""

    def __init__(self, matrix):
        m = np.asarray(matrix, dtype=np.float64).reshape(3, 3)
        if m[2, 2] == 0 or not np.isfinite(m).all():
            raise SingularSystemError("homography needs a finite matrix with m[2,2] != 0")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) < 1e-12:
            raise SingularSystemError("homography matrix is singular")
        self.matrix = m

    def __call__(self, pts) -> np.ndarray:
        return apply_homography(self.matrix, pts)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))

    def to_dict(self) -> dict:
        return {"matrix": [float(v) for v in self.matrix.ravel()]}

    @classmethod
    def from_dict(cls, d: dict) -> "Homography":
        if "matrix" in d:
            vals = d["matrix"]
            if len(vals) != 9:
                raise ConfigError("homography 'matrix' needs 9 row-major values")
            return cls(np.asarray(vals, dtype=np.float64).reshape(3, 3))
        if "pairs" in d:
            pairs = d["pairs"]
            try:
                src = [p["pixel"] for p in pairs]
                dst = [p["ground"] for p in pairs]
            except (TypeError, KeyError):
                src = [p[0] for p in pairs]
                dst = [p[1] for p in pairs]
            return homography_from_points(src, dst)
        raise ConfigError("homography JSON needs 'matrix' or 'pairs'")


def apply_homography(matrix, pts) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    hom = np.hstack([pts, np.ones((len(pts), 1))]) @ np.asarray(matrix).T
    return hom[:, :2] / hom[:, 2:3]


def _has_collinear_triple(pts: np.ndarray, rel_tol: float = 1e-9) -> bool:
    scale = max(np.ptp(pts[:, 0]), np.ptp(pts[:, 1]), 1e-300)
    for i in range(4):
        a, b, c = (pts[j] for j in range(4) if j != i)
        area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if abs(area) <= rel_tol * scale * scale:
            return True
    return False


def homography_from_points(src, dst) -> Homography:
    """Direct linear transform from four pixel -> ground correspondences."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != (4, 2) or dst.shape != (4, 2):
        raise ConfigError(f"need exactly 4 point pairs, got {src.shape} and {dst.shape}")
    if _has_collinear_triple(src) or _has_collinear_triple(dst):
        raise SingularSystemError("degenerate correspondences: three points are collinear")
    a = np.zeros((8, 8))
    rhs = np.zeros(8)
    for i, ((u, v), (x, y)) in enumerate(zip(src, dst)):
        a[2 * i] = [u, v, 1, 0, 0, 0, -u * x, -v * x]
        a[2 * i + 1] = [0, 0, 0, u, v, 1, -u * y, -v * y]
        rhs[2 * i], rhs[2 * i + 1] = x, y
    try:
        h = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError:
        raise SingularSystemError("correspondence system is singular") from None
    return Homography(np.append(h, 1.0).reshape(3, 3))


# --- grids -----------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    rows: int
    cols: int
    cell_size: float = 1.0
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1 or self.cell_size <= 0:
            raise ConfigError(f"invalid grid spec {self}")

    def cell_centers(self) -> np.ndarray:
        """[rows*cols, 2] ground (x, y) of every cell centre, row-major."""
        r, c = np.mgrid[0:self.rows, 0:self.cols]
        x = self.origin[0] + (c.ravel() + 0.5) * self.cell_size
        y = self.origin[1] + (r.ravel() + 0.5) * self.cell_size
        return np.stack([x, y], axis=1)

    def to_dict(self) -> dict:
        return {"rows": self.rows, "cols": self.cols, "cell_size": self.cell_size,
                "origin": list(self.origin)}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(int(d["rows"]), int(d["cols"]), float(d.get("cell_size", 1.0)),
                   tuple(float(v) for v in d.get("origin", (0.0, 0.0))))


@dataclass
class CostGrid:
    costs: np.ndarray
    spec: GridSpec
    elevation: np.ndarray | None = None
    sentinel: float = OBSTACLE

    def __post_init__(self):
        self.costs = np.asarray(self.costs, dtype=np.float64)
        if self.costs.shape != (self.spec.rows, self.spec.cols):
            raise DataError(f"cost shape {self.costs.shape} does not match grid spec")
        ok = np.isfinite(self.costs) & (self.costs >= 0)
        if not (ok | (self.costs == self.sentinel)).all():
            raise DataError("costs must be finite and non-negative, or the obstacle sentinel")
        if self.elevation is not None:
            self.elevation = np.asarray(self.elevation, dtype=np.float64)
            if self.elevation.shape != self.costs.shape:
                raise DataError("elevation grid shape does not match costs")

    def blocked(self) -> np.ndarray:
        return self.costs >= self.sentinel

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_gtsr(directory / "costs.gtsr", self.costs)
        meta = {"spec": self.spec.to_dict(), "sentinel": self.sentinel,
                "elevation": self.elevation is not None}
        if self.elevation is not None:
            write_gtsr(directory / "elevation.gtsr", self.elevation)
        (directory / "grid.json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, directory) -> "CostGrid":
        directory = Path(directory)
        try:
            meta = json.loads((directory / "grid.json").read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read grid spec in {directory}: {exc}") from None
        elev = read_gtsr(directory / "elevation.gtsr") if meta.get("elevation") else None
        return cls(read_gtsr(directory / "costs.gtsr"), GridSpec.from_dict(meta["spec"]),
                   elev, float(meta.get("sentinel", OBSTACLE)))


def cell_source_pixels(hom: Homography, spec: GridSpec) -> np.ndarray:
    """Continuous image coordinates (u, v) seen by every cell centre, [rows, cols, 2]."""
    uv = hom.inverse()(spec.cell_centers())
    return uv.reshape(spec.rows, spec.cols, 2)


def project_labels(labels, hom: Homography, spec: GridSpec) -> np.ndarray:
    """Nearest-neighbour inverse warp of an image label map onto the ground grid.

    Cells whose centre maps outside the image are ``UNKNOWN``.
    """
    labels = np.asarray(labels)
    h, w = labels.shape
    uv = cell_source_pixels(hom, spec)
    with np.errstate(invalid="ignore"):
        col = np.floor(uv[..., 0])
        row = np.floor(uv[..., 1])
    inside = np.isfinite(col) & np.isfinite(row) & (col >= 0) & (col < w) & (row >= 0) & (row < h)
    out = np.full((spec.rows, spec.cols), UNKNOWN, dtype=np.int64)
    out[inside] = labels[row[inside].astype(np.intp), col[inside].astype(np.intp)]
    return out


def cost_lookup(gm: GroupMap, table: dict | None = None, sentinel: float = OBSTACLE) -> np.ndarray:
    """Cost per group id, with the unknown-cell cost in the last slot.

    ``table`` maps group names (and ``"unknown"``) to a number or the string
    ``"obstacle"``.
    """
    table = DEFAULT_COSTS if table is None else table
    out = np.zeros(gm.n_groups + 1)
    for i, name in enumerate(gm.names + ["unknown"]):
        if name not in table:
            raise ConfigError(f"cost table has no entry for {name!r}")
        v = table[name]
        if v == "obstacle" or v is None:
            out[i] = sentinel
        else:
            try:
                v = float(v)
            except (TypeError, ValueError):
                raise ConfigError(f"cost for {name!r} must be a number or 'obstacle'") from None
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"cost for {name!r} must be finite and non-negative")
            out[i] = min(v, sentinel)
    return out


def seg_costmap(ground_labels, costs_by_group) -> np.ndarray:
    """Pointwise lookup; ``costs_by_group[-1]`` is used for UNKNOWN cells."""
    ground_labels = np.asarray(ground_labels)
    costs_by_group = np.asarray(costs_by_group, dtype=np.float64)
    n = len(costs_by_group) - 1
    bad = (ground_labels != UNKNOWN) & ((ground_labels < 0) | (ground_labels >= n))
    if bad.any():
        raise ConfigError(f"cost table does not cover group {int(ground_labels[bad][0])}")
    idx = np.where(ground_labels == UNKNOWN, n, ground_labels)
    return costs_by_group[idx]


def elevation_costs(elevation, cell_size: float = 1.0, gain: float = 1.0) -> np.ndarray:
    """Slope-magnitude cost from an elevation grid (metres rise per metre)."""
    elevation = np.asarray(elevation, dtype=np.float64)
    if elevation.shape[0] < 2 or elevation.shape[1] < 2:
        return np.zeros_like(elevation)
    gy, gx = np.gradient(elevation, cell_size)
    return gain * np.hypot(gx, gy)


def fuse(seg_costs, elev_costs, sentinel: float = OBSTACLE) -> np.ndarray:
    """Element-wise sum; any sentinel cell stays the sentinel."""
    a = np.asarray(seg_costs, dtype=np.float64)
    b = np.asarray(elev_costs, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"cannot fuse grids of shape {a.shape} and {b.shape}")
    out = np.minimum(a + b, sentinel)
    out[(a >= sentinel) | (b >= sentinel)] = sentinel
    return out


# --- planning ------------------------------------------------------------------------------


@dataclass
class Plan:
    path: list[tuple[int, int]]
    cost: float


def step_cost(c_from: float, c_to: float, length: float) -> float:
    return length * 0.5 * (c_from + c_to) + length


def plan(grid: CostGrid, start, goal) -> Plan | None:
    """Least-cost 8-connected path by uniform-cost search; ``None`` if unreachable.

    Edge cost is ``step * mean(endpoint costs) + step`` with ``step`` the
    metric step length. Ties pop in row-major cell order, and a predecessor
    is replaced only on strict improvement.
    """
    costs = grid.costs
    rows, cols = costs.shape
    blocked = grid.blocked()
    start, goal = tuple(int(v) for v in start), tuple(int(v) for v in goal)
    for name, (r, c) in (("start", start), ("goal", goal)):
        if not (0 <= r < rows and 0 <= c < cols):
            raise DataError(f"{name} {(r, c)} outside the {rows}x{cols} grid")
        if blocked[r, c]:
            raise DataError(f"{name} {(r, c)} is an obstacle cell")
    cs = grid.spec.cell_size
    diag = cs * math.sqrt(2.0)
    n = rows * cols
    dist = [math.inf] * n
    prev = [-1] * n
    done = [False] * n
    s = start[0] * cols + start[1]
    t = goal[0] * cols + goal[1]
    dist[s] = 0.0
    heap = [(0.0, s)]
    flat = costs.ravel().tolist()
    flat_blocked = blocked.ravel().tolist()
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        if u == t:
            break
        ur, uc = divmod(u, cols)
        for dr, dc in MOVES:
            vr, vc = ur + dr, uc + dc
            if not (0 <= vr < rows and 0 <= vc < cols):
                continue
            v = vr * cols + vc
            if flat_blocked[v] or done[v]:
                continue
            nd = d + step_cost(flat[u], flat[v], diag if dr and dc else cs)
            if nd < dist[v]:
                dist[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd, v))
    if not done[t]:
        return None
    path = []
    u = t
    while u != -1:
        path.append(divmod(u, cols))
        u = prev[u]
    path.reverse()
    return Plan(path, dist[t])


def path_cost(grid: CostGrid, path) -> float:
    """Traversal cost of an explicit cell path under the planner's edge model."""
    cs = grid.spec.cell_size
    total = 0.0
    for (r0, c0), (r1, c1) in zip(path[:-1], path[1:]):
        dr, dc = abs(r1 - r0), abs(c1 - c0)
        if max(dr, dc) != 1:
            raise DataError(f"cells {(r0, c0)} and {(r1, c1)} are not 8-neighbours")
        length = cs * math.sqrt(2.0) if dr and dc else cs
        total += step_cost(grid.costs[r0, c0], grid.costs[r1, c1], length)
    return total


def save_path_csv(path, cells) -> None:
    lines = ["row,col"] + [f"{r},{c}" for r, c in cells]
    Path(path).write_text("\n".join(lines) + "\n")


def load_path_csv(path) -> list[tuple[int, int]]:
    rows = Path(path).read_text().strip().splitlines()
    return [tuple(int(v) for v in line.split(",")) for line in rows[1:]]


# --- navigation metrics -------------------------------------------------------------------------


def _segment_lengths(path) -> np.ndarray:
    p = np.asarray(path, dtype=np.float64).reshape(-1, 2)
    return np.hypot(*np.diff(p, axis=0).T) if len(p) > 1 else np.zeros(0)


def trajectory_roughness(path, elevation) -> float:
    """Cumulative absolute elevation change along the path (metres)."""
    elevation = np.asarray(elevation, dtype=np.float64)
    heights = [elevation[r, c] for r, c in path]
    return float(sum(abs(b - a) for a, b in zip(heights[:-1], heights[1:])))


def most_navigable_group(ground_labels, gm: GroupMap) -> int | None:
    present = {int(v) for v in np.unique(ground_labels) if 0 <= v < gm.n_groups}
    if not present:
        return None
    return min(present, key=lambda g: (gm.groups[g].cost_rank, g))


def trajectory_selection(path, ground_labels, gm: GroupMap) -> float:
    """Percentage of path length lying on the lowest-cost-rank group present.

    Each segment credits half its length to each endpoint cell on that group.
    """
    if not path:
        raise DataError("trajectory_selection needs a non-empty path")
    ground_labels = np.asarray(ground_labels)
    best = most_navigable_group(ground_labels, gm)
    on = np.array([best is not None and ground_labels[r, c] == best for r, c in path], dtype=float)
    if len(path) == 1:
        return 100.0 * on[0]
    seg = _segment_lengths(path)
    return float(100.0 * (seg * 0.5 * (on[:-1] + on[1:])).sum() / seg.sum())


def forbidden_fp_rate(pred_frames, gt_frames, forbidden: int, min_pixels: int = 1) -> float:
    """Percentage of frames with at least ``min_pixels`` spurious forbidden pixels."""
    pred_frames, gt_frames = list(pred_frames), list(gt_frames)
    if len(pred_frames) != len(gt_frames):
        raise DataError(f"{len(pred_frames)} predicted frames vs {len(gt_frames)} ground-truth frames")
    if not pred_frames:
        return 0.0
    hits = 0
    for pred, gt in zip(pred_frames, gt_frames):
        pred, gt = np.asarray(pred), np.asarray(gt)
        if pred.shape != gt.shape:
            raise DataError(f"frame shape mismatch {pred.shape} vs {gt.shape}")
        if int(((pred == forbidden) & (gt != forbidden)).sum()) >= min_pixels:
            hits += 1
    return 100.0 * hits / len(pred_frames)
