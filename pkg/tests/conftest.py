"""Shared test fixtures and small scene builders.

Heavy synthetic datasets are module-scoped; every random draw is seeded so
the suite is fully deterministic.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from semloc.geometry import CameraIntrinsics, RigidPose
from semloc.matching import Correspondence2D3D


def rodrigues(axis, angle):
    """Independent Rodrigues construction used as the test-side oracle."""
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]], dtype=np.float64)
    return np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * (K @ K)


def random_pose(rng, scale=2.0):
    axis = rng.normal(size=3)
    angle = rng.uniform(0.0, math.pi)
    return RigidPose(rodrigues(axis, angle), rng.normal(scale=scale, size=3))


def default_intrinsics(width=640, height=480):
    return CameraIntrinsics(fx=420.0, fy=400.0, cx=320.0, cy=240.0, width=width, height=height)


def synthetic_correspondences(rng, K, pose, n, outlier_frac=0.0, pixel_noise=0.0,
                              source_id="db0", family="fam"):
    """Exact 2D-3D pairs for a known pose, with optional gross outliers
    (world point displaced) and pixel noise on the inliers."""
    depths = rng.uniform(2.0, 10.0, size=n)
    px = rng.uniform(10, K.width - 10, size=n)
    py = rng.uniform(10, K.height - 10, size=n)
    n_out = int(round(outlier_frac * n))
    corrs = []
    for i in range(n):
        cam = np.array([
            (px[i] - K.cx) / K.fx * depths[i],
            (py[i] - K.cy) / K.fy * depths[i],
            depths[i],
        ])
        world = pose.rotation.T @ cam + pose.center
        if i < n_out:
            world = world + rng.normal(scale=3.0, size=3)
        pixel = np.array([px[i], py[i]])
        if pixel_noise > 0:
            pixel = pixel + rng.normal(scale=pixel_noise, size=2)
        corrs.append(Correspondence2D3D(pixel, world, source_id, family, 1.0))
    return corrs


@pytest.fixture(scope="session")
def zero_noise_dataset():
    """Small zero-noise canyon shared by pipeline-level tests.

    Database cameras must be dense enough along the street that same-side
    views overlap, otherwise the depth filter has no confirming neighbor.
    """
    from semloc.synthetic import generate_scene, street_canyon_spec

    spec = street_canyon_spec(seed=301, n_db=10, n_queries=4, image_size=(96, 72),
                              anchors_per_plane=20, length=18.0)
    return generate_scene(spec)
