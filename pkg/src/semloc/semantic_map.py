"""Dense semantic 3D map construction.

Stages: depth-map filtering against neighbor views, voxel-grid fusion of the
filtered depth maps into a point cloud, per-point semantic label voting,
removal of unstable classes, and per-point visibility cones (distance range,
extreme viewing directions, visible angle).

Depth maps are (H, W) float arrays holding z-depth in meters; values <= 0
mark invalid pixels.  Label images are (H, W) uint8 arrays of Cityscapes
train ids 0..18, with 255 meaning unlabeled.  Label lookups use the nearest
pixel (round half up); labels are categorical so no interpolation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from .geometry import (
    CameraIntrinsics,
    RigidPose,
    angle_between,
    back_project_pixels,
)

logger = logging.getLogger(__name__)

__all__ = [
    "CITYSCAPES_CLASS_NAMES",
    "UNLABELED",
    "DEFAULT_UNSTABLE_CLASS_IDS",
    "DepthFilterConfig",
    "VisibilityCone",
    "DensePoint",
    "DenseMap",
    "DatabaseImageRecord",
    "QueryImage",
    "FusedPoint",
    "BuildStats",
    "filter_depth_map",
    "fuse_depth_maps",
    "vote_semantic_label",
    "remove_unstable_classes",
    "compute_visibility_cone",
    "select_filter_neighbors",
    "build_dense_map",
    "nearest_pixel",
]

# Cityscapes train ids.
CITYSCAPES_CLASS_NAMES = (
    "road", "sidewalk", "building", "wall", "fence", "pole",
    "traffic_light", "traffic_sign", "vegetation", "terrain", "sky",
    "person", "rider", "car", "truck", "bus", "train", "motorcycle",
    "bicycle",
)
UNLABELED = 255

# Dynamic objects plus sky: noise sources for localization, removed from maps.
DEFAULT_UNSTABLE_CLASS_IDS = frozenset({10, 11, 12, 13, 14, 15, 16, 17, 18})


def nearest_pixel(xy: np.ndarray) -> np.ndarray:
    """Round continuous pixel coordinates half-up to integer indices."""
    return np.floor(np.asarray(xy, dtype=np.float64) + 0.5).astype(np.int64)


# ── Record types ─────────────────────────────────────────────────────────


@dataclass
class DatabaseImageRecord:
    """A calibrated database image with its per-image map-building inputs."""

    image_id: str
    intrinsics: CameraIntrinsics
    pose: RigidPose
    depth: np.ndarray
    labels: np.ndarray
    global_descriptor: Optional[np.ndarray] = None
    features: dict = field(default_factory=dict)  # family name -> FeatureSet

    def __post_init__(self) -> None:
        shape = (self.intrinsics.height, self.intrinsics.width)
        if self.depth.shape != shape:
            raise ValueError(
                f"{self.image_id}: depth shape {self.depth.shape} != image size {shape}"
            )
        if self.labels.shape != shape:
            raise ValueError(
                f"{self.image_id}: label shape {self.labels.shape} != image size {shape}"
            )
        if not np.all(np.isfinite(self.depth)):
            raise ValueError(f"{self.image_id}: depth map contains non-finite values")
        bad = ~((self.labels <= 18) | (self.labels == UNLABELED))
        if np.any(bad):
            raise ValueError(f"{self.image_id}: label ids outside 0..18 / 255")


@dataclass
class QueryImage:
    """A query: calibrated image with segmentation, features and global
    descriptor, but no pose."""

    image_id: str
    intrinsics: CameraIntrinsics
    labels: np.ndarray
    global_descriptor: Optional[np.ndarray] = None
    features: dict = field(default_factory=dict)
    condition: str = "day"

    def __post_init__(self) -> None:
        if self.condition not in ("day", "night"):
            raise ValueError(f"unknown condition tag {self.condition!r}")
        shape = (self.intrinsics.height, self.intrinsics.width)
        if self.labels.shape != shape:
            raise ValueError(
                f"{self.image_id}: label shape {self.labels.shape} != image size {shape}"
            )


@dataclass(frozen=True)
class DepthFilterConfig:
    """Relative-tolerance depth consistency check.

    A depth survives when |d_r - d_n| / d_n < tau on at least
    min_consistent_neighbors neighbor views, where d_r is the depth of the
    back-projected point seen from the neighbor and d_n the neighbor's own
    stored depth at that pixel.  The absolute value makes the test symmetric;
    the one-sided form would accept arbitrarily occluded points.

    neighbor_ids, when given, maps image id -> expected neighbor id list and
    is checked against the records actually supplied.
    """

    tau: float = 0.01
    min_consistent_neighbors: int = 1
    neighbor_ids: Optional[dict] = None

    def __post_init__(self) -> None:
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.min_consistent_neighbors < 1:
            raise ValueError("min_consistent_neighbors must be >= 1")


@dataclass(frozen=True)
class VisibilityCone:
    """Summary of the database cameras that observed a point.

    d_min/d_max are the extreme Euclidean distances to observing camera
    centers, v_l/v_u the unit point-to-camera directions of the widest pair,
    v_m the unit bisector, and theta the angle between v_l and v_u.
    """

    d_min: float
    d_max: float
    v_l: np.ndarray
    v_u: np.ndarray
    v_m: np.ndarray
    theta: float

    def validate(self, tol: float = 1e-9) -> None:
        """Check cone invariants.

        Maps loaded from disk hold float32-quantized vectors; pass a looser
        tol (1e-6) for those.
        """
        if not (0 < self.d_min <= self.d_max):
            raise ValueError(f"invalid distance range [{self.d_min}, {self.d_max}]")
        for name, v in (("v_l", self.v_l), ("v_u", self.v_u), ("v_m", self.v_m)):
            if abs(np.linalg.norm(v) - 1.0) > tol:
                raise ValueError(f"{name} is not unit length")
        if not (0.0 <= self.theta <= math.pi):
            raise ValueError(f"theta {self.theta} outside [0, pi]")
        if abs(angle_between(self.v_l, self.v_u) - self.theta) > max(tol, 1e-9):
            raise ValueError("theta does not match the angle between v_l and v_u")


@dataclass(frozen=True)
class DensePoint:
    """One fused map point: position, semantic label, visibility cone, and
    the number of database images that contributed to it."""

    position: np.ndarray
    label: int
    cone: VisibilityCone
    support: int

    def __post_init__(self) -> None:
        if not (0 <= self.label <= 18):
            raise ValueError(f"label {self.label} outside 0..18")
        if self.support < 1:
            raise ValueError("support must be >= 1")


class DenseMap:
    """Columnar container for DensePoints.

    Keeps the per-point fields as parallel numpy arrays so gating and
    scoring can run vectorized; indexing with an int yields a DensePoint,
    indexing with a mask/array yields a sub-map.
    """

    def __init__(
        self,
        positions: np.ndarray,
        labels: np.ndarray,
        v_l: np.ndarray,
        v_u: np.ndarray,
        theta: np.ndarray,
        d_min: np.ndarray,
        d_max: np.ndarray,
        support: np.ndarray,
    ) -> None:
        n = len(positions)
        self.positions = np.asarray(positions, dtype=np.float64).reshape(n, 3)
        self.labels = np.asarray(labels, dtype=np.int64).reshape(n)
        self.v_l = np.asarray(v_l, dtype=np.float64).reshape(n, 3)
        self.v_u = np.asarray(v_u, dtype=np.float64).reshape(n, 3)
        self.theta = np.asarray(theta, dtype=np.float64).reshape(n)
        self.d_min = np.asarray(d_min, dtype=np.float64).reshape(n)
        self.d_max = np.asarray(d_max, dtype=np.float64).reshape(n)
        self.support = np.asarray(support, dtype=np.int64).reshape(n)
        # Bisector of the extreme directions, recomputed rather than stored.
        s = self.v_l + self.v_u
        norms = np.linalg.norm(s, axis=1)
        safe = norms > 1e-12
        self.v_m = np.where(safe[:, None], s / np.where(safe, norms, 1.0)[:, None], self.v_l)

    @classmethod
    def from_points(cls, points: Sequence[DensePoint]) -> "DenseMap":
        if len(points) == 0:
            return cls(
                np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)),
                np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0),
            )
        return cls(
            np.stack([p.position for p in points]),
            np.array([p.label for p in points]),
            np.stack([p.cone.v_l for p in points]),
            np.stack([p.cone.v_u for p in points]),
            np.array([p.cone.theta for p in points]),
            np.array([p.cone.d_min for p in points]),
            np.array([p.cone.d_max for p in points]),
            np.array([p.support for p in points]),
        )

    def __len__(self) -> int:
        return len(self.labels)

    def point(self, i: int) -> DensePoint:
        cone = VisibilityCone(
            d_min=float(self.d_min[i]),
            d_max=float(self.d_max[i]),
            v_l=self.v_l[i].copy(),
            v_u=self.v_u[i].copy(),
            v_m=self.v_m[i].copy(),
            theta=float(self.theta[i]),
        )
        return DensePoint(
            position=self.positions[i].copy(),
            label=int(self.labels[i]),
            cone=cone,
            support=int(self.support[i]),
        )

    def __getitem__(self, index):
        if isinstance(index, (int, np.integer)):
            return self.point(int(index))
        idx = np.asarray(index)
        return DenseMap(
            self.positions[idx], self.labels[idx], self.v_l[idx], self.v_u[idx],
            self.theta[idx], self.d_min[idx], self.d_max[idx], self.support[idx],
        )

    def __iter__(self) -> Iterator[DensePoint]:
        return (self.point(i) for i in range(len(self)))

    def validate(self, tol: float = 1e-9) -> None:
        for i in range(len(self)):
            self.point(i).cone.validate(tol=tol)


@dataclass(frozen=True)
class FusedPoint:
    """Voxel-merged point with the ids of the images whose pixels fell in
    the voxel (in database list order)."""

    position: np.ndarray
    image_ids: tuple


@dataclass
class BuildStats:
    """Point counts before/after each map-building stage."""

    valid_pixels_before_filter: int = 0
    valid_pixels_after_filter: int = 0
    fused_points: int = 0
    labeled_points: int = 0
    stable_points: int = 0


# ── Operations ───────────────────────────────────────────────────────────


def filter_depth_map(
    target: DatabaseImageRecord,
    neighbors: Sequence[DatabaseImageRecord],
    cfg: DepthFilterConfig,
) -> np.ndarray:
    """Keep only depths confirmed by reprojection into neighbor views.

    Every valid pixel is back-projected to world, reprojected into each
    neighbor, and compared against the neighbor's stored depth at the
    nearest pixel.  A neighbor with no valid depth there (or the point
    behind its camera / out of bounds) does not count.  Returns a new depth
    map with unconfirmed pixels set to 0.
    """
    if len(neighbors) == 0:
        raise ValueError("neighbor list must be non-empty")
    if cfg.neighbor_ids is not None:
        expected = list(cfg.neighbor_ids.get(target.image_id, []))
        got = [n.image_id for n in neighbors]
        if expected != got:
            raise ValueError(
                f"{target.image_id}: neighbor records {got} do not match "
                f"configured neighbor ids {expected}"
            )

    h, w = target.depth.shape
    valid = target.depth > 0.0
    vy, vx = np.nonzero(valid)
    if len(vy) == 0:
        return np.zeros_like(target.depth)
    pixels = np.stack([vx, vy], axis=1).astype(np.float64)
    depths = target.depth[vy, vx].astype(np.float64)
    world = back_project_pixels(pixels, depths, target.pose, target.intrinsics)

    support = np.zeros(len(world), dtype=np.int64)
    for nb in neighbors:
        cam = (world - nb.pose.center) @ nb.pose.rotation.T
        d_r = cam[:, 2]
        front = d_r > 0.0
        px = np.full((len(world), 2), -1.0)
        px[front, 0] = nb.intrinsics.fx * cam[front, 0] / d_r[front] + nb.intrinsics.cx
        px[front, 1] = nb.intrinsics.fy * cam[front, 1] / d_r[front] + nb.intrinsics.cy
        ij = nearest_pixel(px)
        nh, nw = nb.depth.shape
        inb = front & (ij[:, 0] >= 0) & (ij[:, 0] < nw) & (ij[:, 1] >= 0) & (ij[:, 1] < nh)
        d_n = np.zeros(len(world))
        d_n[inb] = nb.depth[ij[inb, 1], ij[inb, 0]]
        ok = inb & (d_n > 0.0)
        ok[ok] &= np.abs(d_r[ok] - d_n[ok]) / d_n[ok] < cfg.tau
        support += ok.astype(np.int64)

    out = np.zeros_like(target.depth)
    keep = support >= cfg.min_consistent_neighbors
    out[vy[keep], vx[keep]] = target.depth[vy[keep], vx[keep]]
    return out


def fuse_depth_maps(
    records: Sequence[DatabaseImageRecord], voxel_size: float
) -> list[FusedPoint]:
    """Merge back-projected depth pixels on a voxel grid.

    One point per occupied voxel, at the centroid of its members;
    contributing ids are the union of the member source images.  Voxels are
    emitted in first-touch order (records in list order, pixels row-major),
    so the result is deterministic for a given input order.
    """
    if len(records) == 0:
        raise ValueError("record list must be non-empty")
    if not voxel_size > 0:
        raise ValueError("voxel size must be positive")

    sums: dict[tuple, np.ndarray] = {}
    counts: dict[tuple, int] = {}
    contrib: dict[tuple, dict] = {}
    for rec_idx, rec in enumerate(records):
        valid = rec.depth > 0.0
        vy, vx = np.nonzero(valid)
        if len(vy) == 0:
            continue
        pixels = np.stack([vx, vy], axis=1).astype(np.float64)
        depths = rec.depth[vy, vx].astype(np.float64)
        world = back_project_pixels(pixels, depths, rec.pose, rec.intrinsics)
        cells = np.floor(world / voxel_size).astype(np.int64).tolist()
        for k, cell in enumerate(cells):
            key = tuple(cell)
            if key in sums:
                sums[key] += world[k]
                counts[key] += 1
                contrib[key][rec_idx] = None
            else:
                sums[key] = world[k].copy()
                counts[key] = 1
                contrib[key] = {rec_idx: None}

    out = []
    for key in sums:
        ids = tuple(records[i].image_id for i in sorted(contrib[key]))
        out.append(FusedPoint(position=sums[key] / counts[key], image_ids=ids))
    return out


def vote_semantic_label(
    point: np.ndarray, contributing: Sequence[DatabaseImageRecord]
) -> int:
    """Modal label over the point's reprojections into its contributing
    images; ties go to the smallest class id; 255 when no vote exists."""
    if len(contributing) == 0:
        raise ValueError("contributing list must be non-empty")
    votes = np.zeros(19, dtype=np.int64)
    for rec in contributing:
        cam = rec.pose.rotation @ (np.asarray(point, dtype=np.float64) - rec.pose.center)
        if cam[2] <= 0.0:
            continue
        x = rec.intrinsics.fx * cam[0] / cam[2] + rec.intrinsics.cx
        y = rec.intrinsics.fy * cam[1] / cam[2] + rec.intrinsics.cy
        px, py = int(math.floor(x + 0.5)), int(math.floor(y + 0.5))
        if not (0 <= px < rec.intrinsics.width and 0 <= py < rec.intrinsics.height):
            continue
        label = int(rec.labels[py, px])
        if label != UNLABELED:
            votes[label] += 1
    if votes.sum() == 0:
        return UNLABELED
    return int(np.argmax(votes))


def remove_unstable_classes(
    points: Sequence[DensePoint], unstable: frozenset | set = DEFAULT_UNSTABLE_CLASS_IDS
) -> list[DensePoint]:
    """Drop points whose label is unstable or unlabeled; order preserved."""
    return [p for p in points if p.label != UNLABELED and p.label not in unstable]


def compute_visibility_cone(
    point: np.ndarray, contributing: Sequence[DatabaseImageRecord]
) -> VisibilityCone:
    """Distance range and widest direction pair over the contributing
    camera centers.  With a single (distinct) center the cone degenerates to
    a ray: v_l = v_u = v_m and theta = 0."""
    if len(contributing) == 0:
        raise ValueError("contributing list must be non-empty")
    X = np.asarray(point, dtype=np.float64)
    centers = np.stack([rec.pose.center for rec in contributing])
    diff = centers - X
    dist = np.linalg.norm(diff, axis=1)
    if np.any(dist < 1e-9):
        raise ValueError("point coincides with a contributing camera center")
    dirs = diff / dist[:, None]

    best = (0, 0)
    best_angle = 0.0
    for i in range(len(dirs)):
        for j in range(i + 1, len(dirs)):
            a = angle_between(dirs[i], dirs[j])
            if a > best_angle:
                best_angle = a
                best = (i, j)
    v_l = dirs[best[0]]
    v_u = dirs[best[1]]
    s = v_l + v_u
    n = np.linalg.norm(s)
    # Antipodal extremes have no unique bisector; fall back to any
    # perpendicular direction (theta = pi still gates on the angle bound).
    v_m = s / n if n > 1e-12 else _any_perpendicular(v_l)
    return VisibilityCone(
        d_min=float(dist.min()),
        d_max=float(dist.max()),
        v_l=v_l,
        v_u=v_u,
        v_m=v_m,
        theta=best_angle,
    )


def _any_perpendicular(v: np.ndarray) -> np.ndarray:
    helper = np.array([1.0, 0.0, 0.0]) if abs(v[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    p = np.cross(v, helper)
    return p / np.linalg.norm(p)


# ── Map building ─────────────────────────────────────────────────────────


def select_filter_neighbors(
    records: Sequence[DatabaseImageRecord], count: int = 4
) -> dict:
    """Nearest-camera-center neighbor lists (excluding self) for filtering."""
    if len(records) < 2:
        raise ValueError("need at least 2 database images to select neighbors")
    centers = np.stack([r.pose.center for r in records])
    out = {}
    for i, rec in enumerate(records):
        d = np.linalg.norm(centers - centers[i], axis=1)
        order = np.argsort(d, kind="stable")
        picked = [j for j in order if j != i][: min(count, len(records) - 1)]
        out[rec.image_id] = [records[j].image_id for j in picked]
    return out


def _vote_labels_bulk(
    positions: np.ndarray,
    contrib_indices: list,
    records: Sequence[DatabaseImageRecord],
) -> np.ndarray:
    """Vectorized label voting for all fused points at once.

    Same rule as vote_semantic_label: modal label over contributing-image
    reprojections, argmax ties resolving to the smallest class id.
    """
    n = len(positions)
    votes = np.zeros((n, 19), dtype=np.int64)
    point_rows: dict[int, list] = {}
    for row, idxs in enumerate(contrib_indices):
        for ri in idxs:
            point_rows.setdefault(ri, []).append(row)
    for ri, rows in point_rows.items():
        rec = records[ri]
        rows = np.asarray(rows)
        cam = (positions[rows] - rec.pose.center) @ rec.pose.rotation.T
        front = cam[:, 2] > 0.0
        x = np.full(len(rows), -1.0)
        y = np.full(len(rows), -1.0)
        x[front] = rec.intrinsics.fx * cam[front, 0] / cam[front, 2] + rec.intrinsics.cx
        y[front] = rec.intrinsics.fy * cam[front, 1] / cam[front, 2] + rec.intrinsics.cy
        px = np.floor(x + 0.5).astype(np.int64)
        py = np.floor(y + 0.5).astype(np.int64)
        ok = front & (px >= 0) & (px < rec.intrinsics.width) & (py >= 0) & (py < rec.intrinsics.height)
        if not np.any(ok):
            continue
        labels = rec.labels[py[ok], px[ok]].astype(np.int64)
        keep = labels != UNLABELED
        np.add.at(votes, (rows[ok][keep], labels[keep]), 1)
    out = np.full(n, UNLABELED, dtype=np.int64)
    voted = votes.sum(axis=1) > 0
    out[voted] = np.argmax(votes[voted], axis=1)
    return out


def _cones_bulk(
    positions: np.ndarray,
    contrib_indices: list,
    records: Sequence[DatabaseImageRecord],
) -> tuple[np.ndarray, ...]:
    """Vectorized visibility cones; same selection rule (first strictly
    widest pair in (i, j) order) as compute_visibility_cone."""
    n = len(positions)
    max_s = max(len(ix) for ix in contrib_indices)
    centers = np.stack([r.pose.center for r in records])
    cam = np.zeros((n, max_s, 3))
    mask = np.zeros((n, max_s), dtype=bool)
    for row, idxs in enumerate(contrib_indices):
        cam[row, : len(idxs)] = centers[list(idxs)]
        mask[row, : len(idxs)] = True

    diff = cam - positions[:, None, :]
    dist = np.linalg.norm(diff, axis=2)
    if np.any(dist[mask] < 1e-9):
        raise ValueError("a fused point coincides with a camera center")
    dirs = np.where(mask[:, :, None], diff / np.where(mask, dist, 1.0)[:, :, None], 0.0)

    d_min = np.where(mask, dist, np.inf).min(axis=1)
    d_max = np.where(mask, dist, -np.inf).max(axis=1)

    # Pairwise angles over the (small) padded axis.
    cos = np.einsum("nik,njk->nij", dirs, dirs)
    cos = np.clip(cos, -1.0, 1.0)
    ang = np.arccos(cos)
    pair_mask = mask[:, :, None] & mask[:, None, :]
    iu, ju = np.triu_indices(max_s, k=1)
    if len(iu) == 0:
        theta = np.zeros(n)
        v_l = dirs[:, 0, :]
        v_u = dirs[:, 0, :]
    else:
        flat = np.where(pair_mask[:, iu, ju], ang[:, iu, ju], -1.0)
        arg = np.argmax(flat, axis=1)
        theta = flat[np.arange(n), arg]
        no_pair = theta < 0.0
        theta[no_pair] = 0.0
        li = np.where(no_pair, 0, iu[arg])
        ui = np.where(no_pair, 0, ju[arg])
        v_l = dirs[np.arange(n), li, :]
        v_u = dirs[np.arange(n), ui, :]
    return d_min, d_max, v_l, v_u, theta


def build_dense_map(
    records: Sequence[DatabaseImageRecord],
    filter_cfg: DepthFilterConfig | None = None,
    voxel_size: float = 0.05,
    unstable: frozenset | set = DEFAULT_UNSTABLE_CLASS_IDS,
    neighbor_count: int = 4,
) -> tuple[DenseMap, BuildStats]:
    """Full map build: filter -> fuse -> vote -> cones -> drop unstable.

    Per-stage point counts are logged and returned in BuildStats.
    """
    if filter_cfg is None:
        filter_cfg = DepthFilterConfig()
    stats = BuildStats()
    stats.valid_pixels_before_filter = int(sum((r.depth > 0).sum() for r in records))

    neighbor_ids = filter_cfg.neighbor_ids or select_filter_neighbors(records, neighbor_count)
    by_id = {r.image_id: r for r in records}
    cfg = DepthFilterConfig(
        tau=filter_cfg.tau,
        min_consistent_neighbors=filter_cfg.min_consistent_neighbors,
        neighbor_ids=neighbor_ids,
    )
    filtered = []
    for rec in records:
        nbs = [by_id[i] for i in neighbor_ids[rec.image_id]]
        new_depth = filter_depth_map(rec, nbs, cfg)
        filtered.append(
            DatabaseImageRecord(
                image_id=rec.image_id,
                intrinsics=rec.intrinsics,
                pose=rec.pose,
                depth=new_depth,
                labels=rec.labels,
                global_descriptor=rec.global_descriptor,
                features=rec.features,
            )
        )
    stats.valid_pixels_after_filter = int(sum((r.depth > 0).sum() for r in filtered))
    logger.info(
        "depth filter kept %d / %d pixels",
        stats.valid_pixels_after_filter,
        stats.valid_pixels_before_filter,
    )

    fused = fuse_depth_maps(filtered, voxel_size)
    stats.fused_points = len(fused)
    logger.info("fused %d points at voxel size %.3g m", len(fused), voxel_size)
    if len(fused) == 0:
        return DenseMap.from_points([]), stats

    id_to_idx = {r.image_id: i for i, r in enumerate(records)}
    positions = np.stack([f.position for f in fused])
    contrib = [tuple(id_to_idx[i] for i in f.image_ids) for f in fused]

    labels = _vote_labels_bulk(positions, contrib, filtered)
    labeled = labels != UNLABELED
    stats.labeled_points = int(labeled.sum())
    logger.info("voted labels: %d / %d points labeled", stats.labeled_points, len(fused))

    # Same rule as remove_unstable_classes, applied on the label array
    # before cones are computed for the survivors.
    stable = labeled & ~np.isin(labels, np.array(sorted(unstable), dtype=np.int64))
    stats.stable_points = int(stable.sum())
    logger.info(
        "removed unstable classes: %d / %d labeled points kept",
        stats.stable_points,
        stats.labeled_points,
    )
    if stats.stable_points == 0:
        logger.warning("dense map is empty after unstable-class removal")
        return DenseMap.from_points([]), stats

    positions = positions[stable]
    labels = labels[stable]
    contrib = [c for c, keep in zip(contrib, stable) if keep]
    supports = np.array([len(c) for c in contrib], dtype=np.int64)
    d_min, d_max, v_l, v_u, theta = _cones_bulk(positions, contrib, records)
    return DenseMap(positions, labels, v_l, v_u, theta, d_min, d_max, supports), stats
