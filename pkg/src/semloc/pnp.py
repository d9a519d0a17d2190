"""Absolute camera pose from 2D-3D correspondences.

Contents: a three-point minimal solver (direct quartic parametrization of
the camera position along the feature rays), a plain RANSAC loop for
per-retrieved-image temporary poses, a weighted RANSAC whose minimal
samples are drawn with probability proportional to the semantic weights,
and Levenberg-Marquardt reprojection refinement with the rotation updated
on its manifold.

Weighted and unweighted RANSAC share one code path (the unweighted case
runs with uniform weights), so equal weights reproduce plain RANSAC draw
for draw under the same seed.  Inlier counting is never weighted; weights
only bias hypothesis sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .geometry import CameraIntrinsics, RigidPose
from .matching import Correspondence2D3D

__all__ = [
    "RansacConfig",
    "PnPSolution",
    "solve_p3p",
    "solve_pnp_dlt",
    "estimate_temporary_pose",
    "weighted_ransac_pnp",
    "refine_pose",
]

_COLLINEAR_AREA_TOL = 1e-12


def _cross3(a, b) -> np.ndarray:
    return np.array(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )


def _norm3(v) -> float:
    return math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])


def _quartic_roots(a4: float, a3: float, a2: float, a1: float, a0: float) -> np.ndarray:
    """Closed-form (Ferrari) roots of a quartic, with eigenvalue fallback.

    Roughly 20x faster than np.roots; the caller Newton-polishes the real
    roots afterwards, so last-ulp accuracy is not required here.
    """
    if a4 == 0.0 or not np.isfinite([a4, a3, a2, a1, a0]).all():
        return np.roots([a4, a3, a2, a1, a0]).astype(complex)
    b = a3 / a4
    c = a2 / a4
    d = a1 / a4
    e = a0 / a4
    b2 = b * b
    p = -3.0 * b2 / 8.0 + c
    q = b2 * b / 8.0 - b * c / 2.0 + d
    r = -3.0 * b2 * b2 / 256.0 + b2 * c / 16.0 - b * d / 4.0 + e

    pp = -p * p / 12.0 - r
    qq = -p * p * p / 108.0 + p * r / 3.0 - q * q / 8.0
    disc = complex(qq * qq / 4.0 + pp * pp * pp / 27.0)
    rr = -qq / 2.0 + disc ** 0.5
    u = rr ** (1.0 / 3.0)
    if u == 0:
        y = -5.0 * p / 6.0 - complex(qq) ** (1.0 / 3.0)
    else:
        y = -5.0 * p / 6.0 - pp / (3.0 * u) + u
    w = (p + 2.0 * y) ** 0.5
    if abs(w) < 1e-12:
        return np.roots([a4, a3, a2, a1, a0]).astype(complex)
    s1 = (-(3.0 * p + 2.0 * y + 2.0 * q / w)) ** 0.5
    s2 = (-(3.0 * p + 2.0 * y - 2.0 * q / w)) ** 0.5
    shift = -b / 4.0
    roots = np.array(
        [
            shift + 0.5 * (w + s1),
            shift + 0.5 * (w - s1),
            shift + 0.5 * (-w + s2),
            shift + 0.5 * (-w - s2),
        ],
        dtype=complex,
    )
    if not np.all(np.isfinite(roots.view(np.float64))):
        return np.roots([a4, a3, a2, a1, a0]).astype(complex)
    return roots


def _newton_polish_root(x: float, coeffs: tuple) -> float:
    a4, a3, a2, a1, a0 = coeffs
    for _ in range(2):
        f = (((a4 * x + a3) * x + a2) * x + a1) * x + a0
        df = ((4.0 * a4 * x + 3.0 * a3) * x + 2.0 * a2) * x + a1
        if df == 0.0:
            break
        step = f / df
        if not math.isfinite(step):
            break
        x -= step
    return x


@dataclass(frozen=True)
class RansacConfig:
    """RANSAC constants; all logged with results.

    confidence drives the adaptive iteration bound; max_iterations caps it.
    min_inliers rejects weak consensus (12 for final poses, 6 is a sensible
    choice for temporary per-retrieved-image poses).  Samples are rejected
    and redrawn when the 3 world points are near-collinear or the 3 pixels
    span less than min_pixel_span_px.
    """

    inlier_threshold_px: float = 8.0
    max_iterations: int = 10000
    confidence: float = 0.999
    min_inliers: int = 12
    seed: int = 0
    min_pixel_span_px: float = 10.0
    max_sample_attempts: int = 20
    adaptive_stopping: bool = True  # False runs exactly max_iterations

    def __post_init__(self) -> None:
        if not self.inlier_threshold_px > 0:
            raise ValueError("inlier threshold must be positive")
        if not (0.0 < self.confidence < 1.0):
            raise ValueError("confidence must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class PnPSolution:
    pose: RigidPose
    inlier_indices: np.ndarray
    mean_reprojection_error_px: float
    iterations_used: int = 0

    def __post_init__(self) -> None:
        idx = np.asarray(self.inlier_indices, dtype=np.int64).reshape(-1)
        idx.setflags(write=False)
        object.__setattr__(self, "inlier_indices", idx)

    @property
    def num_inliers(self) -> int:
        return len(self.inlier_indices)


# ── Minimal solver ───────────────────────────────────────────────────────


def _bearings_from_pixels(pixels: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Unit camera-frame rays for (N, 2) pixel coordinates."""
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    f = np.empty((len(px), 3))
    f[:, 0] = (px[:, 0] - K.cx) / K.fx
    f[:, 1] = (px[:, 1] - K.cy) / K.fy
    f[:, 2] = 1.0
    return f / np.linalg.norm(f, axis=1, keepdims=True)


def _p3p_candidates(P: np.ndarray, f: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Raw pose candidates (R, C) from 3 world points and 3 unit bearings.

    Direct computation of camera position and orientation: build an
    intermediate camera frame from the first two rays and an intermediate
    world frame from the first two points, reduce to a quartic in the
    cosine of the remaining free angle, and back-substitute.  Callers are
    expected to polish and verify candidates by reprojection.
    """
    P1, P2, P3 = P[0], P[1], P[2]
    v1 = P2 - P1
    v2 = P3 - P1
    if 0.5 * _norm3(_cross3(v1, v2)) <= _COLLINEAR_AREA_TOL:
        raise ValueError("world points are collinear")

    f1, f2, f3 = f[0], f[1], f[2]
    e1 = f1
    e3 = _cross3(f1, f2)
    n3 = _norm3(e3)
    if n3 < 1e-12:
        raise ValueError("degenerate bearing vectors (parallel rays)")
    e3 = e3 / n3
    e2 = _cross3(e3, e1)
    T = np.stack([e1, e2, e3])
    f3_t = T @ f3
    if f3_t[2] > 0.0:
        # Swap the first two correspondences so the free angle stays in [0, pi].
        f1, f2 = f[1], f[0]
        P1, P2 = P[1], P[0]
        e1 = f1
        e3 = _cross3(f1, f2)
        n3 = _norm3(e3)
        if n3 < 1e-12:
            raise ValueError("degenerate bearing vectors (parallel rays)")
        e3 = e3 / n3
        e2 = _cross3(e3, e1)
        T = np.stack([e1, e2, e3])
        f3_t = T @ f3

    n1 = P2 - P1
    n1 = n1 / _norm3(n1)
    n3w = _cross3(n1, P3 - P1)
    n3w = n3w / _norm3(n3w)
    n2 = _cross3(n3w, n1)
    N = np.stack([n1, n2, n3w])

    P3_n = N @ (P3 - P1)
    d12 = _norm3(P2 - P1)
    p1 = P3_n[0]
    p2 = P3_n[1]

    phi1 = f3_t[0] / f3_t[2]
    phi2 = f3_t[1] / f3_t[2]

    cos_beta = float(np.dot(f1, f2))
    b = 1.0 / (1.0 - cos_beta * cos_beta) - 1.0
    if b < 0.0:
        raise ValueError("degenerate bearing vectors (parallel rays)")
    b = math.sqrt(b) if cos_beta >= 0.0 else -math.sqrt(b)

    phi1_2 = phi1 * phi1
    phi2_2 = phi2 * phi2
    p1_2 = p1 * p1
    p1_3 = p1_2 * p1
    p1_4 = p1_3 * p1
    p2_2 = p2 * p2
    p2_3 = p2_2 * p2
    p2_4 = p2_3 * p2
    d12_2 = d12 * d12
    b_2 = b * b

    a4 = -phi2_2 * p2_4 - p2_4 * phi1_2 - p2_4
    a3 = 2.0 * p2_3 * d12 * b + 2.0 * phi2_2 * p2_3 * d12 * b - 2.0 * phi2 * p2_3 * phi1 * d12
    a2 = (
        -phi2_2 * p2_2 * p1_2
        - phi2_2 * p2_2 * d12_2 * b_2
        - phi2_2 * p2_2 * d12_2
        + phi2_2 * p2_4
        + p2_4 * phi1_2
        + 2.0 * p1 * p2_2 * d12
        + 2.0 * phi1 * phi2 * p1 * p2_2 * d12 * b
        - p2_2 * p1_2 * phi1_2
        + 2.0 * p1 * p2_2 * phi2_2 * d12
        - p2_2 * d12_2 * b_2
        - 2.0 * p1_2 * p2_2
    )
    a1 = (
        2.0 * p1_2 * p2 * d12 * b
        + 2.0 * phi2 * p2_3 * phi1 * d12
        - 2.0 * phi2_2 * p2_3 * d12 * b
        - 2.0 * p1 * p2 * d12_2 * b
    )
    a0 = (
        -2.0 * phi2 * p2_2 * phi1 * p1 * d12 * b
        + phi2_2 * p2_2 * d12_2
        + 2.0 * p1_3 * d12
        - p1_2 * d12_2
        + phi2_2 * p2_2 * p1_2
        - p1_4
        - 2.0 * phi2_2 * p2_2 * p1 * d12
        + p2_2 * phi1_2 * p1_2
        + phi2_2 * p2_2 * d12_2 * b_2
    )

    roots = _quartic_roots(a4, a3, a2, a1, a0)
    out = []
    for root in roots:
        if abs(root.imag) > 1e-6 * max(1.0, abs(root.real)):
            continue
        x = _newton_polish_root(float(root.real), (a4, a3, a2, a1, a0))
        cos_theta = float(np.clip(x, -1.0, 1.0))
        denom = -phi1 * cos_theta * p2 / phi2 + p1 - d12
        if abs(denom) < 1e-15:
            continue
        cot_alpha = (-phi1 * p1 / phi2 - cos_theta * p2 + d12 * b) / denom
        sin_theta = math.sqrt(max(0.0, 1.0 - cos_theta * cos_theta))
        sin_alpha = math.sqrt(1.0 / (cot_alpha * cot_alpha + 1.0))
        cos_alpha = math.sqrt(max(0.0, 1.0 - sin_alpha * sin_alpha))
        if cot_alpha < 0.0:
            cos_alpha = -cos_alpha

        scale = sin_alpha * b + cos_alpha
        C_n = d12 * scale * np.array(
            [cos_alpha, cos_theta * sin_alpha, sin_theta * sin_alpha]
        )
        C = P1 + N.T @ C_n
        Q = np.array(
            [
                [-cos_alpha, -sin_alpha * cos_theta, -sin_alpha * sin_theta],
                [sin_alpha, -cos_alpha * cos_theta, -cos_alpha * sin_theta],
                [0.0, -sin_theta, cos_theta],
            ]
        )
        R_w2c = T.T @ Q @ N
        out.append((R_w2c, C))
    return out


def _reprojection_residuals(
    R: np.ndarray, C: np.ndarray, points: np.ndarray, pixels: np.ndarray, K: CameraIntrinsics
) -> tuple[np.ndarray, np.ndarray]:
    """Residual vector (2N,) and per-point camera coordinates; residuals of
    points at or behind the camera are set to inf."""
    cam = (points - C) @ R.T
    res = np.full(2 * len(points), np.inf)
    front = cam[:, 2] > 0.0
    z = cam[front, 2]
    res.reshape(-1, 2)[front, 0] = K.fx * cam[front, 0] / z + K.cx - pixels[front, 0]
    res.reshape(-1, 2)[front, 1] = K.fy * cam[front, 1] / z + K.cy - pixels[front, 1]
    return res, cam


def _pose_jacobian(
    R: np.ndarray, C: np.ndarray, points: np.ndarray, cam: np.ndarray, K: CameraIntrinsics
) -> np.ndarray:
    """Jacobian (2N, 6) of reprojection residuals wrt the local pose update
    [omega, dC]: R <- Exp(omega) @ R, C <- C + dC.  Rows of points behind
    the camera are zero."""
    n = len(points)
    J = np.zeros((2 * n, 6))
    front = cam[:, 2] > 0.0
    z = cam[front, 2]
    x = cam[front, 0]
    y = cam[front, 1]
    # d(res)/d(cam): 2x3 per point.
    du = np.zeros((front.sum(), 3))
    dv = np.zeros((front.sum(), 3))
    du[:, 0] = K.fx / z
    du[:, 2] = -K.fx * x / (z * z)
    dv[:, 1] = K.fy / z
    dv[:, 2] = -K.fy * y / (z * z)
    # d(cam)/d(omega) = -[cam]x, d(cam)/d(dC) = -R.
    p = cam[front]
    skew = np.zeros((front.sum(), 3, 3))
    skew[:, 0, 1] = -p[:, 2]
    skew[:, 0, 2] = p[:, 1]
    skew[:, 1, 0] = p[:, 2]
    skew[:, 1, 2] = -p[:, 0]
    skew[:, 2, 0] = -p[:, 1]
    skew[:, 2, 1] = p[:, 0]
    dcam = np.concatenate([-skew, -np.broadcast_to(R, (front.sum(), 3, 3))], axis=2)
    rows = np.nonzero(front)[0]
    J[2 * rows, :] = np.einsum("nk,nkj->nj", du, dcam)
    J[2 * rows + 1, :] = np.einsum("nk,nkj->nj", dv, dcam)
    return J


def _exp_so3(w: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        return np.eye(3)
    a = w / theta
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]], dtype=np.float64)
    return np.eye(3) + math.sin(theta) * K + (1.0 - math.cos(theta)) * (K @ K)


def _polish_pose(
    R: np.ndarray,
    C: np.ndarray,
    points: np.ndarray,
    pixels: np.ndarray,
    K: CameraIntrinsics,
    iterations: int = 3,
) -> tuple[np.ndarray, np.ndarray]:
    """Few Gauss-Newton steps on the reprojection of a minimal set; with 6
    residuals and 6 parameters this converges to machine precision from any
    reasonable candidate."""
    for _ in range(iterations):
        res, cam = _reprojection_residuals(R, C, points, pixels, K)
        if not np.all(np.isfinite(res)):
            return R, C
        J = _pose_jacobian(R, C, points, cam, K)
        try:
            delta = np.linalg.lstsq(J, -res, rcond=None)[0]
        except np.linalg.LinAlgError:
            return R, C
        R = _exp_so3(delta[:3]) @ R
        C = C + delta[3:]
    return R, C


def solve_p3p(
    corrs: Sequence[Correspondence2D3D] | np.ndarray,
    K: CameraIntrinsics,
    pixels: Optional[np.ndarray] = None,
) -> list[RigidPose]:
    """Camera poses consistent with exactly 3 correspondences.

    Accepts either three Correspondence2D3D or an (3, 3) array of world
    points plus an (3, 2) array of pixels.  Returns 0 to 4 poses; every
    returned pose reprojects the three points within 1e-6 px (candidates
    are polished by Gauss-Newton and filtered by that bound).  Raises on
    collinear world points or parallel rays.
    """
    if pixels is None:
        cs = list(corrs)
        if len(cs) != 3:
            raise ValueError(f"exactly 3 correspondences required, got {len(cs)}")
        points = np.stack([c.world_point for c in cs])
        pix = np.stack([c.query_pixel for c in cs])
    else:
        points = np.asarray(corrs, dtype=np.float64).reshape(3, 3)
        pix = np.asarray(pixels, dtype=np.float64).reshape(3, 2)

    bearings = _bearings_from_pixels(pix, K)
    out: list[RigidPose] = []
    for R, C in _p3p_candidates(points, bearings):
        R, C = _polish_pose(R, C, points, pix, K)
        res, _ = _reprojection_residuals(R, C, points, pix, K)
        if not np.all(np.isfinite(res)):
            continue
        err = np.linalg.norm(res.reshape(-1, 2), axis=1)
        if np.max(err) >= 1e-6:
            continue
        # Orthonormality can drift slightly through back-substitution; snap
        # to the nearest rotation before constructing the pose.
        U, _, Vt = np.linalg.svd(R)
        R = U @ np.diag([1.0, 1.0, np.linalg.det(U @ Vt)]) @ Vt
        pose = RigidPose(R, C)
        if not any(
            np.linalg.norm(pose.center - p.center) < 1e-9
            and np.max(np.abs(pose.rotation - p.rotation)) < 1e-9
            for p in out
        ):
            out.append(pose)
    return out


def solve_pnp_dlt(
    corrs: Sequence[Correspondence2D3D], K: CameraIntrinsics
) -> Optional[RigidPose]:
    """Direct linear transform pose from >= 6 correspondences.

    Fallback for when minimal sampling keeps degenerating.  Fails (returns
    None) for coplanar point sets, which the DLT cannot handle.
    """
    if len(corrs) < 6:
        return None
    points = np.stack([c.world_point for c in corrs])
    pixels = np.stack([c.query_pixel for c in corrs])
    # Normalized camera coordinates remove K from the system.
    xn = (pixels[:, 0] - K.cx) / K.fx
    yn = (pixels[:, 1] - K.cy) / K.fy

    mean = points.mean(axis=0)
    scale = np.sqrt(3.0) / max(np.mean(np.linalg.norm(points - mean, axis=1)), 1e-12)
    Pn = (points - mean) * scale

    n = len(corrs)
    A = np.zeros((2 * n, 12))
    Ph = np.concatenate([Pn, np.ones((n, 1))], axis=1)
    A[0::2, 0:4] = Ph
    A[0::2, 8:12] = -xn[:, None] * Ph
    A[1::2, 4:8] = Ph
    A[1::2, 8:12] = -yn[:, None] * Ph
    try:
        _, s, Vt = np.linalg.svd(A)
    except np.linalg.LinAlgError:
        return None
    if s[-2] < 1e-9 * s[0]:
        return None  # rank-deficient (coplanar or otherwise degenerate)
    Pmat = Vt[-1].reshape(3, 4)
    M = Pmat[:, :3]
    if np.linalg.det(M) < 0:
        Pmat = -Pmat
        M = -M
    # Orthonormalize M into a rotation and recover the translation scale.
    U, sv, Vt2 = np.linalg.svd(M)
    R = U @ Vt2
    if np.linalg.det(R) < 0:
        U[:, -1] *= -1
        R = U @ Vt2
    sigma = sv.mean()
    t = Pmat[:, 3] / sigma
    C_norm = -R.T @ t
    C = C_norm / scale + mean
    try:
        pose = RigidPose(R, C)
    except ValueError:
        return None
    res, _ = _reprojection_residuals(R, C, points, pixels, K)
    if not np.all(np.isfinite(res)):
        return None
    return pose


# ── RANSAC ───────────────────────────────────────────────────────────────


def _draw_minimal_sample(rng: np.random.Generator, weights: np.ndarray) -> np.ndarray:
    """Three distinct indices, drawn sequentially with probability
    proportional to weight, renormalizing over the remaining items.  Used by
    both weighted and unweighted (uniform-weight) RANSAC."""
    w = weights.astype(np.float64).copy()
    picks = np.empty(3, dtype=np.int64)
    for k in range(3):
        total = w.sum()
        if total <= 0.0:
            # Fewer than 3 positively weighted items remain; fall back to
            # uniform over the not-yet-picked rest.
            w = np.ones(len(weights))
            w[picks[:k]] = 0.0
            total = w.sum()
        cum = np.cumsum(w)
        r = rng.random() * total
        i = int(np.searchsorted(cum, r, side="right"))
        i = min(i, len(w) - 1)
        picks[k] = i
        w[i] = 0.0
    return picks


def _sample_is_degenerate(
    points: np.ndarray, pixels: np.ndarray, cfg: RansacConfig
) -> bool:
    v1 = points[1] - points[0]
    v2 = points[2] - points[0]
    area2 = _norm3(_cross3(v1, v2))
    n1 = _norm3(v1)
    n2 = _norm3(v2)
    if n1 < 1e-12 or n2 < 1e-12 or area2 <= 2.0 * _COLLINEAR_AREA_TOL:
        return True
    if area2 / (n1 * n2) < 1e-3:  # near-collinear: sin of spanned angle
        return True
    span = max(
        math.hypot(pixels[0, 0] - pixels[1, 0], pixels[0, 1] - pixels[1, 1]),
        math.hypot(pixels[0, 0] - pixels[2, 0], pixels[0, 1] - pixels[2, 1]),
        math.hypot(pixels[1, 0] - pixels[2, 0], pixels[1, 1] - pixels[2, 1]),
    )
    return span < cfg.min_pixel_span_px


def _ransac_pnp(
    corrs: Sequence[Correspondence2D3D],
    K: CameraIntrinsics,
    cfg: RansacConfig,
    weights: Optional[np.ndarray],
) -> Optional[PnPSolution]:
    n = len(corrs)
    points = np.stack([c.world_point for c in corrs])
    pixels = np.stack([c.query_pixel for c in corrs])
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=np.float64)

    rng = np.random.default_rng(cfg.seed)
    best_count = 0
    best_err = np.inf
    best_pose: Optional[RigidPose] = None
    needed = cfg.max_iterations
    it = 0
    while it < needed:
        it += 1
        sample = None
        for _ in range(cfg.max_sample_attempts):
            cand = _draw_minimal_sample(rng, w)
            if not _sample_is_degenerate(points[cand], pixels[cand], cfg):
                sample = cand
                break
        if sample is None:
            continue
        try:
            candidates = _p3p_candidates(points[sample], _bearings_from_pixels(pixels[sample], K))
        except ValueError:
            continue
        for R, C in candidates:
            cam = (points - C) @ R.T
            front = cam[:, 2] > 0.0
            err = np.full(n, np.inf)
            z = cam[front, 2]
            dx = K.fx * cam[front, 0] / z + K.cx - pixels[front, 0]
            dy = K.fy * cam[front, 1] / z + K.cy - pixels[front, 1]
            err[front] = np.hypot(dx, dy)
            inl = err < cfg.inlier_threshold_px
            count = int(inl.sum())
            if count == 0:
                continue
            mean_err = float(err[inl].mean())
            if count > best_count or (count == best_count and mean_err < best_err):
                try:
                    best_pose = RigidPose(*_orthonormalized(R, C))
                except ValueError:
                    continue
                best_count = count
                best_err = mean_err
                if cfg.adaptive_stopping:
                    ratio = count / n
                    if ratio >= 1.0:
                        needed = min(needed, it)
                    else:
                        denom = math.log(max(1e-300, 1.0 - ratio**3))
                        needed = min(
                            cfg.max_iterations,
                            max(it, int(math.ceil(math.log(1.0 - cfg.confidence) / denom))),
                        )

    if best_pose is None and n >= 6:
        dlt = solve_pnp_dlt(corrs, K)
        if dlt is not None:
            best_pose = dlt

    if best_pose is None:
        return None
    # Re-verification pass: the returned solution restates its own inliers.
    res, _ = _reprojection_residuals(best_pose.rotation, best_pose.center, points, pixels, K)
    err = np.linalg.norm(res.reshape(-1, 2), axis=1)
    err = np.where(np.isfinite(err), err, np.inf)
    inl = err < cfg.inlier_threshold_px
    if int(inl.sum()) < cfg.min_inliers:
        return None
    return PnPSolution(
        pose=best_pose,
        inlier_indices=np.nonzero(inl)[0],
        mean_reprojection_error_px=float(err[inl].mean()),
        iterations_used=it,
    )


def _orthonormalized(R: np.ndarray, C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    U, _, Vt = np.linalg.svd(R)
    Rn = U @ np.diag([1.0, 1.0, np.linalg.det(U @ Vt)]) @ Vt
    return Rn, C


def estimate_temporary_pose(
    corrs: Sequence[Correspondence2D3D],
    K: CameraIntrinsics,
    cfg: RansacConfig,
) -> Optional[PnPSolution]:
    """Plain (uniform-sampling) RANSAC + P3P over one retrieved image's
    correspondences; None when fewer than 4 correspondences exist or no
    model reaches min_inliers."""
    if len(corrs) < 4:
        return None
    return _ransac_pnp(corrs, K, cfg, weights=None)


def weighted_ransac_pnp(
    corrs: Sequence[Correspondence2D3D],
    K: CameraIntrinsics,
    cfg: RansacConfig,
) -> Optional[PnPSolution]:
    """RANSAC + P3P with minimal samples drawn by correspondence weight.

    Weights must be normalized to sum to 1 (see
    scoring.normalize_weights); inlier counting is identical to the
    unweighted loop.  Raises when fewer than 4 correspondences are given;
    returns None when no model reaches min_inliers.
    """
    if len(corrs) < 4:
        raise ValueError(f"need at least 4 correspondences, got {len(corrs)}")
    w = np.array([c.weight for c in corrs], dtype=np.float64)
    if abs(w.sum() - 1.0) > 1e-6:
        raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
    return _ransac_pnp(corrs, K, cfg, weights=w)


# ── Refinement ───────────────────────────────────────────────────────────


def refine_pose(
    initial: PnPSolution,
    corrs: Sequence[Correspondence2D3D],
    K: CameraIntrinsics,
    max_iterations: int = 100,
    relative_tolerance: float = 1e-10,
) -> RigidPose:
    """Levenberg-Marquardt minimization of the summed squared reprojection
    error over the solution's inliers.

    The rotation is updated multiplicatively through the exponential map (3
    local parameters), so iterates stay on the rotation manifold.  The cost
    never increases across accepted steps; if no step improves, the initial
    pose is returned unchanged.
    """
    idx = initial.inlier_indices
    points = np.stack([corrs[i].world_point for i in idx])
    pixels = np.stack([corrs[i].query_pixel for i in idx])
    R = np.array(initial.pose.rotation)
    C = np.array(initial.pose.center)

    res, cam = _reprojection_residuals(R, C, points, pixels, K)
    if not np.all(np.isfinite(res)):
        return initial.pose
    cost = float(res @ res)
    if cost == 0.0:
        return initial.pose

    lam = 1e-6
    for _ in range(max_iterations):
        J = _pose_jacobian(R, C, points, cam, K)
        H = J.T @ J
        g = J.T @ res
        try:
            delta = np.linalg.solve(H + lam * np.eye(6), -g)
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        R_new = _exp_so3(delta[:3]) @ R
        C_new = C + delta[3:]
        res_new, cam_new = _reprojection_residuals(R_new, C_new, points, pixels, K)
        if np.all(np.isfinite(res_new)):
            cost_new = float(res_new @ res_new)
        else:
            cost_new = np.inf
        if cost_new < cost:
            rel = (cost - cost_new) / cost
            R, C, res, cam, cost = R_new, C_new, res_new, cam_new, cost_new
            lam = max(lam / 3.0, 1e-12)
            if rel < relative_tolerance or cost == 0.0:
                break
        else:
            lam *= 10.0
            if lam > 1e12:
                break
    return RigidPose(R, C)
