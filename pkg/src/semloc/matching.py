"""Per-family 2D-2D descriptor matching and lifting matches to 2D-3D
correspondences through database depth maps.

A feature family is a named keypoint+descriptor type (e.g. a handcrafted
corner detector or a learned detector) with its own matching rules.  Hybrid
operation simply pools correspondences from several families; families with
complementary strengths cover for each other across imaging conditions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .geometry import back_project
from .semantic_map import DatabaseImageRecord, nearest_pixel

__all__ = [
    "FeatureFamily",
    "FeatureSet",
    "Match2D2D",
    "Correspondence2D3D",
    "LiftResult",
    "match_family",
    "lift_to_3d",
    "merge_hybrid",
    "set_weights",
]


@dataclass(frozen=True)
class FeatureFamily:
    """Matching rules for one feature family.

    ratio, when set, applies Lowe's test: keep a match only when
    best/second-best distance < ratio (kept when fewer than 2 candidates
    exist).  Mutual nearest-neighbor validation is on by default.
    """

    name: str
    descriptor_dim: int
    use_mutual_nn: bool = True
    ratio: Optional[float] = None

    def __post_init__(self) -> None:
        if self.descriptor_dim < 1:
            raise ValueError("descriptor dimension must be >= 1")
        if self.ratio is not None and not (0.0 < self.ratio <= 1.0):
            raise ValueError(f"ratio must lie in (0, 1], got {self.ratio}")


@dataclass(frozen=True)
class FeatureSet:
    """Keypoints of one family in one image: (N, 2) pixel locations and
    (N, dim) descriptors."""

    family: str
    locations: np.ndarray
    descriptors: np.ndarray

    def __post_init__(self) -> None:
        loc = np.asarray(self.locations, dtype=np.float64).reshape(-1, 2)
        desc = np.asarray(self.descriptors, dtype=np.float64)
        if desc.ndim != 2:
            desc = desc.reshape(len(loc), -1) if desc.size else desc.reshape(0, 0)
        if len(loc) != len(desc):
            raise ValueError("locations and descriptors disagree in length")
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "descriptors", desc)

    def __len__(self) -> int:
        return len(self.locations)


@dataclass(frozen=True)
class Match2D2D:
    query_index: int
    db_index: int
    family: str
    distance: float


@dataclass(frozen=True)
class Correspondence2D3D:
    """Query pixel paired with a world point, tagged with the database image
    that produced it and the sampling weight used by pose estimation."""

    query_pixel: np.ndarray
    world_point: np.ndarray
    source_image_id: str
    family: str
    weight: float = 1.0

    def __post_init__(self) -> None:
        qp = np.asarray(self.query_pixel, dtype=np.float64).reshape(2)
        wp = np.asarray(self.world_point, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(wp)):
            raise ValueError("world point must be finite")
        if not self.weight >= 0.0:
            raise ValueError("weight must be non-negative")
        object.__setattr__(self, "query_pixel", qp)
        object.__setattr__(self, "world_point", wp)


@dataclass(frozen=True)
class LiftResult:
    correspondences: list
    dropped_out_of_bounds: int = 0
    dropped_invalid_depth: int = 0


def match_family(
    query_set: FeatureSet, db_set: FeatureSet, family: FeatureFamily
) -> list[Match2D2D]:
    """Nearest-neighbor matches under the family's validation rules.

    Each query index appears at most once; with mutual validation each
    database index does too.
    """
    for s, side in ((query_set, "query"), (db_set, "database")):
        if s.family != family.name:
            raise ValueError(f"{side} set belongs to family {s.family!r}, not {family.name!r}")
        if len(s) and s.descriptors.shape[1] != family.descriptor_dim:
            raise ValueError(
                f"{side} descriptors have dim {s.descriptors.shape[1]}, "
                f"family expects {family.descriptor_dim}"
            )
    nq, nd = len(query_set), len(db_set)
    if nq == 0 or nd == 0:
        return []

    d = cdist(query_set.descriptors, db_set.descriptors)
    nn = np.argmin(d, axis=1)
    best = d[np.arange(nq), nn]

    keep = np.ones(nq, dtype=bool)
    if family.ratio is not None and nd >= 2:
        part = np.partition(d, 1, axis=1)
        second = part[:, 1]
        # best < ratio * second also rejects the ambiguous 0/0 case.
        keep &= best < family.ratio * second
    if family.use_mutual_nn:
        nn_back = np.argmin(d, axis=0)
        keep &= nn_back[nn] == np.arange(nq)

    return [
        Match2D2D(query_index=int(i), db_index=int(nn[i]), family=family.name,
                  distance=float(best[i]))
        for i in np.nonzero(keep)[0]
    ]


def lift_to_3d(
    matches: Sequence[Match2D2D],
    query_set: FeatureSet,
    db: DatabaseImageRecord,
) -> LiftResult:
    """Turn 2D-2D matches into 2D-3D correspondences via the database depth
    map.

    The database keypoints come from db.features[match.family].  The depth
    is read at the nearest pixel to the database keypoint; the keypoint's
    continuous location is then back-projected with that depth.  Matches
    over invalid depth or outside the image are dropped and counted.
    """
    corrs = []
    oob = 0
    bad_depth = 0
    h, w = db.depth.shape
    for m in matches:
        db_set = db.features[m.family]
        loc = db_set.locations[m.db_index]
        px, py = nearest_pixel(loc)
        if not (0 <= px < w and 0 <= py < h):
            oob += 1
            continue
        depth = float(db.depth[py, px])
        if depth <= 0.0:
            bad_depth += 1
            continue
        world = back_project(loc, depth, db.pose, db.intrinsics)
        corrs.append(
            Correspondence2D3D(
                query_pixel=query_set.locations[m.query_index],
                world_point=world,
                source_image_id=db.image_id,
                family=m.family,
                weight=1.0,
            )
        )
    return LiftResult(corrs, dropped_out_of_bounds=oob, dropped_invalid_depth=bad_depth)


def merge_hybrid(per_family: Sequence[Sequence[Correspondence2D3D]]) -> list:
    """Pool correspondences across families, preserving family tags.

    No deduplication: families observe complementary image regions, and a
    pixel matched by several families (or several retrieved images) simply
    contributes multiple entries.
    """
    out: list = []
    for corrs in per_family:
        out.extend(corrs)
    return out


def set_weights(corrs: Sequence[Correspondence2D3D], weights: np.ndarray) -> list:
    """New correspondence list with replaced weights."""
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if len(w) != len(corrs):
        raise ValueError("weight count does not match correspondence count")
    return [replace(c, weight=float(wi)) for c, wi in zip(corrs, w)]
