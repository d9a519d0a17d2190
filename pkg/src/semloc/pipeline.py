"""End-to-end localization: retrieval, per-family matching, lifting,
temporary poses, semantic scoring, weighted RANSAC, and refinement.

Per query the flow is:

  1. retrieve the top-k database images (k per condition tag),
  2. per retrieved image and family, match descriptors and lift the
     matches through the image's depth map to 2D-3D correspondences,
  3. estimate a temporary pose per retrieved image (plain RANSAC) and
     score it by semantic consistency against the query segmentation,
  4. pool all correspondences, turn scores into sampling weights,
  5. run the weighted RANSAC-PnP and refine the winner on its inliers.

Every stage is deterministic: per-query and per-retrieved-image RANSAC
seeds are derived from the master seed with numpy SeedSequences, so a run
reproduces bit-identically regardless of thread count.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .config import PipelineConfig
from .geometry import RigidPose
from .matching import lift_to_3d, match_family, merge_hybrid
from .pnp import estimate_temporary_pose, refine_pose, weighted_ransac_pnp
from .retrieval import GlobalDescriptor, RetrievalConfig, RetrievalIndex, build_index, query_top_k
from .scoring import SemanticScore, gate_visible, normalize_weights, semantic_consistency_score
from .semantic_map import BuildStats, DatabaseImageRecord, DenseMap, DepthFilterConfig, QueryImage, build_dense_map

logger = logging.getLogger(__name__)

__all__ = ["LocalizationResult", "build_map", "localize_query", "localize_all"]

FAILURE_NO_CORRESPONDENCES = "no correspondences"
FAILURE_NO_CONSENSUS = "no consensus"


@dataclass
class LocalizationResult:
    query_id: str
    condition: str
    pose: Optional[RigidPose]
    failure_reason: Optional[str] = None
    diagnostics: dict = field(default_factory=dict)


def build_map(
    records: Sequence[DatabaseImageRecord], cfg: PipelineConfig
) -> tuple[DenseMap, BuildStats]:
    """Map construction driven by a pipeline config."""
    return build_dense_map(
        records,
        filter_cfg=DepthFilterConfig(
            tau=cfg.depth_filter_tau,
            min_consistent_neighbors=cfg.depth_filter_min_neighbors,
        ),
        voxel_size=cfg.fusion_voxel_size,
        unstable=cfg.unstable_classes,
        neighbor_count=cfg.depth_filter_neighbor_count,
    )


def _query_seed(master_seed: int, query_index: int, stage: int) -> int:
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(query_index, stage))
    return int(ss.generate_state(1, dtype=np.uint64)[0] % (2**63))


def localize_query(
    query: QueryImage,
    query_index: int,
    db_records: Sequence[DatabaseImageRecord],
    dense_map: DenseMap,
    index: RetrievalIndex,
    cfg: PipelineConfig,
) -> LocalizationResult:
    by_id = {r.image_id: r for r in db_records}
    top_k = cfg.top_k_night if query.condition == "night" else cfg.top_k_day
    retrieved = query_top_k(
        index,
        GlobalDescriptor(query.image_id, query.global_descriptor),
        RetrievalConfig(top_k=top_k),
    )

    diagnostics: dict = {
        "retrieved": [[i, d] for i, d in retrieved],
        "images": {},
    }

    pooled = []
    scores = []
    gate_cfg = cfg.gate()
    for rank, (image_id, _dist) in enumerate(retrieved):
        db = by_id[image_id]
        per_family = []
        match_counts = {}
        for name, query_set in query.features.items():
            if name not in db.features:
                continue
            db_set = db.features[name]
            if len(query_set) == 0 or len(db_set) == 0:
                per_family.append([])
                match_counts[name] = {"matches": 0, "lifted": 0,
                                      "dropped_oob": 0, "dropped_invalid_depth": 0}
                continue
            family = cfg.family_rules(name, query_set.descriptors.shape[1])
            matches = match_family(query_set, db_set, family)
            lifted = lift_to_3d(matches, query_set, db)
            per_family.append(lifted.correspondences)
            match_counts[name] = {
                "matches": len(matches),
                "lifted": len(lifted.correspondences),
                "dropped_oob": lifted.dropped_out_of_bounds,
                "dropped_invalid_depth": lifted.dropped_invalid_depth,
            }
        image_corrs = merge_hybrid(per_family)

        temp_seed = _query_seed(cfg.seed, query_index, stage=1000 + rank)
        temp = estimate_temporary_pose(image_corrs, query.intrinsics, cfg.temp_ransac(temp_seed))
        if temp is None:
            score = SemanticScore(image_id=image_id, consistent=0, projected=0)
        else:
            gated = gate_visible(dense_map, temp.pose, gate_cfg)
            score = semantic_consistency_score(
                gated, temp.pose, query.intrinsics, query.labels, image_id=image_id
            )
        scores.append(score)
        diagnostics["images"][image_id] = {
            **match_counts,
            "correspondences": len(image_corrs),
            "temporary_pose": temp is not None,
            "temp_inliers": 0 if temp is None else temp.num_inliers,
            "temp_iterations": 0 if temp is None else temp.iterations_used,
            "score_consistent": score.consistent,
            "score_projected": score.projected,
        }
        pooled.extend(image_corrs)

    if cfg.score_floor > 0.0:
        passing = {s.image_id for s in scores if s.consistent >= cfg.score_floor}
        pooled = [c for c in pooled if c.source_image_id in passing]
        diagnostics["score_floor_kept"] = len(pooled)

    if len(pooled) < 4:
        return LocalizationResult(
            query_id=query.image_id,
            condition=query.condition,
            pose=None,
            failure_reason=FAILURE_NO_CORRESPONDENCES,
            diagnostics=diagnostics,
        )

    weighted = normalize_weights(scores, pooled)
    final_seed = _query_seed(cfg.seed, query_index, stage=1)
    solution = weighted_ransac_pnp(weighted, query.intrinsics, cfg.final_ransac(final_seed))
    if solution is None:
        return LocalizationResult(
            query_id=query.image_id,
            condition=query.condition,
            pose=None,
            failure_reason=FAILURE_NO_CONSENSUS,
            diagnostics=diagnostics,
        )
    refined = refine_pose(
        solution,
        weighted,
        query.intrinsics,
        max_iterations=cfg.refine_max_iterations,
        relative_tolerance=cfg.refine_relative_tolerance,
    )
    diagnostics["final_inliers"] = solution.num_inliers
    diagnostics["final_mean_error_px"] = solution.mean_reprojection_error_px
    diagnostics["final_iterations"] = solution.iterations_used
    return LocalizationResult(
        query_id=query.image_id,
        condition=query.condition,
        pose=refined,
        diagnostics=diagnostics,
    )


def localize_all(
    queries: Sequence[QueryImage],
    db_records: Sequence[DatabaseImageRecord],
    dense_map: DenseMap,
    cfg: PipelineConfig,
    threads: int = 1,
) -> list:
    """Localize every query; results come back in query order regardless of
    the thread count, so output files are bit-identical either way."""
    index = build_index(
        [GlobalDescriptor(r.image_id, r.global_descriptor) for r in db_records]
    )

    def run(item):
        i, q = item
        t0 = time.perf_counter()
        result = localize_query(q, i, db_records, dense_map, index, cfg)
        logger.info(
            "query %s: %s (%.2fs)",
            q.image_id,
            "pose" if result.pose is not None else f"failed: {result.failure_reason}",
            time.perf_counter() - t0,
        )
        return result

    items = list(enumerate(queries))
    if threads <= 1:
        return [run(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, items))
