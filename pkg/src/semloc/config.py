"""Pipeline configuration and its key-value file format.

The config file is plain ``key = value`` lines with ``#`` comments.  Every
tunable constant of the pipeline lives here; unknown keys are rejected so
typos fail loudly.  Per-family matching rules use dotted keys, e.g.::

    family.corner.mutual_nn = true
    family.corner.ratio = off
    family.blob.ratio = 0.9
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .matching import FeatureFamily
from .pnp import RansacConfig
from .scoring import VisibilityGateConfig
from .semantic_map import DEFAULT_UNSTABLE_CLASS_IDS, DepthFilterConfig

__all__ = ["FamilyMatchConfig", "PipelineConfig", "parse_config_file", "render_config"]


@dataclass(frozen=True)
class FamilyMatchConfig:
    mutual_nn: bool = True
    ratio: Optional[float] = None


@dataclass
class PipelineConfig:
    """Every constant the pipeline consumes, with library defaults."""

    seed: int = 0
    # depth filtering
    depth_filter_tau: float = 0.01
    depth_filter_min_neighbors: int = 1
    depth_filter_neighbor_count: int = 4
    # fusion
    fusion_voxel_size: float = 0.05
    unstable_classes: frozenset = DEFAULT_UNSTABLE_CLASS_IDS
    # visibility gate
    gate_distance_margin: float = 1.2
    gate_angle_margin: float = 0.1
    # retrieval
    top_k_day: int = 20
    top_k_night: int = 30
    # RANSAC (final weighted stage)
    ransac_inlier_threshold_px: float = 8.0
    ransac_confidence: float = 0.999
    ransac_max_iterations: int = 10000
    ransac_min_inliers: int = 12
    # RANSAC (temporary per-retrieved-image stage)
    temp_ransac_min_inliers: int = 6
    temp_ransac_max_iterations: int = 10000
    ransac_min_pixel_span_px: float = 10.0
    # correspondences from images scoring below this are dropped (0 = off)
    score_floor: float = 0.0
    # refinement
    refine_max_iterations: int = 100
    refine_relative_tolerance: float = 1e-10
    # per-family matching rules
    families: dict = field(default_factory=dict)  # name -> FamilyMatchConfig

    def family_rules(self, name: str, descriptor_dim: int) -> FeatureFamily:
        rules = self.families.get(name, FamilyMatchConfig())
        return FeatureFamily(
            name=name,
            descriptor_dim=descriptor_dim,
            use_mutual_nn=rules.mutual_nn,
            ratio=rules.ratio,
        )

    def depth_filter(self) -> DepthFilterConfig:
        return DepthFilterConfig(
            tau=self.depth_filter_tau,
            min_consistent_neighbors=self.depth_filter_min_neighbors,
        )

    def gate(self) -> VisibilityGateConfig:
        return VisibilityGateConfig(
            distance_margin=self.gate_distance_margin,
            angle_margin=self.gate_angle_margin,
        )

    def final_ransac(self, seed: int) -> RansacConfig:
        return RansacConfig(
            inlier_threshold_px=self.ransac_inlier_threshold_px,
            max_iterations=self.ransac_max_iterations,
            confidence=self.ransac_confidence,
            min_inliers=self.ransac_min_inliers,
            seed=seed,
            min_pixel_span_px=self.ransac_min_pixel_span_px,
        )

    def temp_ransac(self, seed: int) -> RansacConfig:
        return replace(
            self.final_ransac(seed),
            min_inliers=self.temp_ransac_min_inliers,
            max_iterations=self.temp_ransac_max_iterations,
        )


_SCALAR_KEYS = {
    "seed": ("seed", int),
    "depth_filter.tau": ("depth_filter_tau", float),
    "depth_filter.min_consistent_neighbors": ("depth_filter_min_neighbors", int),
    "depth_filter.neighbor_count": ("depth_filter_neighbor_count", int),
    "fusion.voxel_size": ("fusion_voxel_size", float),
    "gate.distance_margin": ("gate_distance_margin", float),
    "gate.angle_margin": ("gate_angle_margin", float),
    "retrieval.top_k_day": ("top_k_day", int),
    "retrieval.top_k_night": ("top_k_night", int),
    "ransac.inlier_threshold_px": ("ransac_inlier_threshold_px", float),
    "ransac.confidence": ("ransac_confidence", float),
    "ransac.max_iterations": ("ransac_max_iterations", int),
    "ransac.min_inliers": ("ransac_min_inliers", int),
    "ransac.temp_min_inliers": ("temp_ransac_min_inliers", int),
    "ransac.temp_max_iterations": ("temp_ransac_max_iterations", int),
    "ransac.min_pixel_span_px": ("ransac_min_pixel_span_px", float),
    "ransac.score_floor": ("score_floor", float),
    "refine.max_iterations": ("refine_max_iterations", int),
    "refine.relative_tolerance": ("refine_relative_tolerance", float),
}

_FAMILY_KEY = re.compile(r"^family\.([A-Za-z0-9_\-]+)\.(mutual_nn|ratio)$")


def _parse_bool(value: str, key: str) -> bool:
    low = value.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"{key}: expected a boolean, got {value!r}")


def parse_config_file(path) -> PipelineConfig:
    cfg = PipelineConfig()
    families: dict = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in _SCALAR_KEYS:
            attr, cast = _SCALAR_KEYS[key]
            try:
                setattr(cfg, attr, cast(value))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
            continue
        if key == "map.unstable_classes":
            ids = frozenset(int(v) for v in value.split(",") if v.strip() != "")
            if any(not (0 <= i <= 18) for i in ids):
                raise ValueError(f"{path}:{lineno}: class ids must lie in 0..18")
            cfg.unstable_classes = ids
            continue
        m = _FAMILY_KEY.match(key)
        if m:
            name, attr = m.group(1), m.group(2)
            rules = families.get(name, FamilyMatchConfig())
            if attr == "mutual_nn":
                rules = FamilyMatchConfig(
                    mutual_nn=_parse_bool(value, key), ratio=rules.ratio
                )
            else:
                ratio = None if value.lower() in ("off", "none") else float(value)
                rules = FamilyMatchConfig(mutual_nn=rules.mutual_nn, ratio=ratio)
            families[name] = rules
            continue
        raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
    cfg.families = families
    return cfg


def render_config(cfg: PipelineConfig) -> str:
    """Config file text reproducing the given configuration."""
    lines = [
        "# semloc pipeline configuration",
        f"seed = {cfg.seed}",
        f"depth_filter.tau = {cfg.depth_filter_tau!r}",
        f"depth_filter.min_consistent_neighbors = {cfg.depth_filter_min_neighbors}",
        f"depth_filter.neighbor_count = {cfg.depth_filter_neighbor_count}",
        f"fusion.voxel_size = {cfg.fusion_voxel_size!r}",
        "map.unstable_classes = " + ",".join(str(i) for i in sorted(cfg.unstable_classes)),
        f"gate.distance_margin = {cfg.gate_distance_margin!r}",
        f"gate.angle_margin = {cfg.gate_angle_margin!r}",
        f"retrieval.top_k_day = {cfg.top_k_day}",
        f"retrieval.top_k_night = {cfg.top_k_night}",
        f"ransac.inlier_threshold_px = {cfg.ransac_inlier_threshold_px!r}",
        f"ransac.confidence = {cfg.ransac_confidence!r}",
        f"ransac.max_iterations = {cfg.ransac_max_iterations}",
        f"ransac.min_inliers = {cfg.ransac_min_inliers}",
        f"ransac.temp_min_inliers = {cfg.temp_ransac_min_inliers}",
        f"ransac.temp_max_iterations = {cfg.temp_ransac_max_iterations}",
        f"ransac.min_pixel_span_px = {cfg.ransac_min_pixel_span_px!r}",
        f"ransac.score_floor = {cfg.score_floor!r}",
        f"refine.max_iterations = {cfg.refine_max_iterations}",
        f"refine.relative_tolerance = {cfg.refine_relative_tolerance!r}",
    ]
    for name in sorted(cfg.families):
        rules = cfg.families[name]
        lines.append(f"family.{name}.mutual_nn = {'true' if rules.mutual_nn else 'false'}")
        lines.append(
            f"family.{name}.ratio = "
            + ("off" if rules.ratio is None else repr(rules.ratio))
        )
    return "\n".join(lines) + "\n"
