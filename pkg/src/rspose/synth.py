"""Synthetic rolling-shutter two-view scenes and the sweep experiment harness.

Scenes are generated so that noiseless data satisfies the package's epipolar
model exactly: view i observes X through the inverse of its instant per-row
factor and view j applies its factor's transpose to the rotated point while
the translation stays fixed, matching skew(t) @ Rj^T @ R @ Ri. Row indices
are found by a damped fixed-point iteration (projected row == readout row).
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import GenerationFailed, RsPoseError
from .geometry import (Correspondence, NormalizedPoint, RelativePose,
                       RSFrameObservation, RotationModel, rotation_error,
                       skew_many, translation_error, unit)

logger = logging.getLogger(__name__)

METHOD_GS = "GSRP"
METHOD_RS = "G-RSRP"
METHOD_RS_REFINED = "G-RSRP+"
ALL_METHODS = (METHOD_GS, METHOD_RS, METHOD_RS_REFINED)

PROTOCOLS = ("angular", "angular-linear", "gyro-noise", "camera-noise", "planar")

_FIXED_POINT_ITERATIONS = 50
_FIXED_POINT_TOL = 1e-8  # rows
_MIN_SURVIVORS = 20
_RESCUE_BATCHES = 10


@dataclass(frozen=True)
class SceneConfig:
    n_points: int = 150
    min_depth: float = 2.0
    max_depth: float = 60.0
    rot_std_deg: float = 10.0
    trans_std_m: float = 2.0
    image_w: int = 1920
    image_h: int = 1080
    focal: float = 640.0
    readout_s_per_row: float = 60e-6
    seed: int = 0
    planar_depth: Optional[float] = None

    def __post_init__(self):
        for name in ("n_points", "min_depth", "max_depth", "rot_std_deg",
                     "trans_std_m", "image_w", "image_h", "focal", "readout_s_per_row"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.readout_s_per_row * self.image_h >= 0.1:
            raise ValueError("total readout time exceeds 0.1 s sanity bound")

    @property
    def cx(self) -> float:
        return self.image_w / 2.0

    @property
    def cy(self) -> float:
        return self.image_h / 2.0


@dataclass(frozen=True)
class MotionConfig:
    """Per-view velocity magnitudes; view 1 is camera i, view 2 is camera j."""

    omega_mag_1: float = 0.0
    omega_mag_2: float = 0.0
    linvel_mag_1: float = 0.0
    linvel_mag_2: float = 0.0

    def __post_init__(self):
        for name in ("omega_mag_1", "omega_mag_2", "linvel_mag_1", "linvel_mag_2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class NoiseConfig:
    pixel_std: float = 1.0
    gyro_std: float = 0.1

    def __post_init__(self):
        if self.pixel_std < 0 or self.gyro_std < 0:
            raise ValueError("noise standard deviations must be non-negative")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    pose: RelativePose
    translation_metric: np.ndarray
    omega_i: np.ndarray
    omega_j: np.ndarray
    linvel_i: np.ndarray
    linvel_j: np.ndarray
    points: np.ndarray        # (n, 3) in the canonical camera-i frame
    rows_i: np.ndarray
    rows_j: np.ndarray
    pixels_i: np.ndarray      # (n, 2) noiseless pixel coordinates
    pixels_j: np.ndarray
    model: str


@dataclass(frozen=True)
class TrialResult:
    method: str
    rotation_error_deg: float
    translation_error_deg: float
    inlier_count: int
    runtime_s: float

    def __post_init__(self):
        if not (0.0 <= self.rotation_error_deg <= 180.0):
            raise ValueError("rotation error outside [0, 180] degrees")
        if not (0.0 <= self.translation_error_deg <= 180.0):
            raise ValueError("translation error outside [0, 180] degrees")


def cayley_many(v: np.ndarray) -> np.ndarray:
    """Batched Cayley rotations for v of shape (n, 3)."""
    s = np.einsum("ni,ni->n", v, v)
    eye = np.eye(3)
    out = ((1.0 - s)[:, None, None] * eye
           + 2.0 * skew_many(v)
           + 2.0 * np.einsum("ni,nj->nij", v, v))
    return out / (1.0 + s)[:, None, None]


def rotation_xyz_euler(angles_rad) -> np.ndarray:
    """R = Rz @ Ry @ Rx from three fixed-axis Euler angles."""
    ax, ay, az = angles_rad
    cx, sx = math.cos(ax), math.sin(ax)
    cy, sy = math.cos(ay), math.sin(ay)
    cz, sz = math.cos(az), math.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def _world_to_row_frames(model: str, side: str, rows: np.ndarray,
                         w_scaled: np.ndarray) -> np.ndarray:
    """Per-point matrices applying the instant rotation for the given view side.

    Exact mode uses the (orthogonal) Cayley rotation's transpose for both
    sides. Linearized mode must invert the factor on side i but transpose it
    on side j so that the linearized epipolar identity holds exactly.
    """
    ang = rows[:, None] * w_scaled[None, :]
    if model == "exact":
        return np.swapaxes(cayley_many(ang), 1, 2)
    factors = np.eye(3) + skew_many(ang)
    if side == "i":
        return np.linalg.inv(factors)
    return np.swapaxes(factors, 1, 2)


def _project(pts: np.ndarray, scene: SceneConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pixel (u, v) coordinates and depth for camera-frame points (n, 3)."""
    z = pts[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = scene.focal * pts[:, 0] / z + scene.cx
        v = scene.focal * pts[:, 1] / z + scene.cy
    return u, v, z


def _solve_rows(base_pts: np.ndarray, offset: np.ndarray, w_scaled: np.ndarray,
                lin_per_row: np.ndarray, scene: SceneConfig, model: str, side: str):
    """Damped fixed point v <- v/2 + row(v)/2 for every point of one view.

    The instant rotation applies to base_pts only (the rotational part);
    offset is the view's translation, added unrotated so generated data
    matches skew(t) @ Rj^T @ R @ Ri exactly. lin_per_row is the instant
    translation per row (lambda * d). Returns (rows, u, v, ok).
    """
    n = base_pts.shape[0]
    u0, v0, z0 = _project(base_pts + offset, scene)
    rows = np.where(np.isfinite(v0), np.clip(v0, 0.0, scene.image_h - 1.0), 0.0)
    converged = np.zeros(n, dtype=bool)
    u = np.full(n, np.nan)
    v = np.full(n, np.nan)
    z = np.full(n, np.nan)
    for _ in range(_FIXED_POINT_ITERATIONS):
        frames = _world_to_row_frames(model, side, rows, w_scaled)
        pts = (np.einsum("nab,nb->na", frames, base_pts) + offset
               + rows[:, None] * lin_per_row)
        u, v, z = _project(pts, scene)
        good = np.isfinite(v) & (z > 1e-3)
        delta = np.where(good, np.abs(v - rows), np.inf)
        converged = good & (delta < _FIXED_POINT_TOL)
        if np.all(converged | ~good):
            break
        rows = np.where(good, 0.5 * rows + 0.5 * v, rows)
    ok = (converged
          & (u >= 0.0) & (u < scene.image_w)
          & (v >= 0.0) & (v < scene.image_h))
    return rows, u, v, ok


def _sample_points(scene: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    """Points uniform over the first camera's image footprint and depth range."""
    n = scene.n_points
    u = rng.uniform(0.0, scene.image_w, size=n)
    v = rng.uniform(0.0, scene.image_h, size=n)
    if scene.planar_depth is not None:
        z = np.full(n, float(scene.planar_depth))
    else:
        z = rng.uniform(scene.min_depth, scene.max_depth, size=n)
    x = z * (u - scene.cx) / scene.focal
    y = z * (v - scene.cy) / scene.focal
    return np.column_stack([x, y, z])


def generate_scene(scene: SceneConfig, motion: MotionConfig,
                   model: RotationModel = "exact") -> tuple[list[Correspondence], GroundTruth]:
    """Random two-view rolling-shutter scene with exactly consistent geometry.

    Samples the relative pose (Euler angles ~ N(0, rot_std), translation ~
    N(0, trans_std) per axis), per-view velocity directions, and 3D points in
    the first camera's frustum, then solves each point's row fixed point in
    both views. Points leaving either image or failing to converge are
    culled; raises GenerationFailed when fewer than 20 correspondences
    survive after 10 rescue re-samples.
    """
    rng = np.random.default_rng(scene.seed)
    rot = rotation_xyz_euler(rng.normal(0.0, math.radians(scene.rot_std_deg), size=3))
    t_metric = rng.normal(0.0, scene.trans_std_m, size=3)
    while np.linalg.norm(t_metric) < 1e-6:
        t_metric = rng.normal(0.0, scene.trans_std_m, size=3)

    def _direction():
        return unit(rng.normal(size=3))

    omega_i = motion.omega_mag_1 * _direction()
    omega_j = motion.omega_mag_2 * _direction()
    linvel_i = motion.linvel_mag_1 * _direction()
    linvel_j = motion.linvel_mag_2 * _direction()

    lam = scene.readout_s_per_row
    wpi = lam * omega_i
    wpj = lam * omega_j

    zero = np.zeros(3)
    kept = []
    for _ in range(1 + _RESCUE_BATCHES):
        pts = _sample_points(scene, rng)
        rotated_j = pts @ rot.T
        rows_i, u_i, v_i, ok_i = _solve_rows(pts, zero, wpi, lam * linvel_i,
                                             scene, model, "i")
        rows_j, u_j, v_j, ok_j = _solve_rows(rotated_j, t_metric, wpj, lam * linvel_j,
                                             scene, model, "j")
        ok = ok_i & ok_j
        for k in np.flatnonzero(ok):
            kept.append((pts[k], rows_i[k], u_i[k], v_i[k], rows_j[k], u_j[k], v_j[k]))
        if len(kept) >= _MIN_SURVIVORS:
            break
    if len(kept) < _MIN_SURVIVORS:
        raise GenerationFailed(
            f"only {len(kept)} correspondences survived culling "
            f"after {_RESCUE_BATCHES} rescue re-samples")

    points = np.stack([k[0] for k in kept])
    rows_i = np.array([k[1] for k in kept])
    pixels_i = np.column_stack([[k[2] for k in kept], [k[3] for k in kept]])
    rows_j = np.array([k[4] for k in kept])
    pixels_j = np.column_stack([[k[5] for k in kept], [k[6] for k in kept]])

    correspondences = _build_correspondences(pixels_i, rows_i, pixels_j, rows_j,
                                             wpi, wpj, scene)
    gt = GroundTruth(pose=RelativePose(rot, unit(t_metric)),
                     translation_metric=t_metric,
                     omega_i=omega_i, omega_j=omega_j,
                     linvel_i=linvel_i, linvel_j=linvel_j,
                     points=points, rows_i=rows_i, rows_j=rows_j,
                     pixels_i=pixels_i, pixels_j=pixels_j, model=model)
    return correspondences, gt


def _build_correspondences(pixels_i, rows_i, pixels_j, rows_j, wpi, wpj,
                           scene: SceneConfig) -> list[Correspondence]:
    out = []
    for k in range(len(rows_i)):
        pi = NormalizedPoint((pixels_i[k, 0] - scene.cx) / scene.focal,
                             (pixels_i[k, 1] - scene.cy) / scene.focal)
        pj = NormalizedPoint((pixels_j[k, 0] - scene.cx) / scene.focal,
                             (pixels_j[k, 1] - scene.cy) / scene.focal)
        out.append(Correspondence(
            RSFrameObservation(pi, float(rows_i[k]), wpi),
            RSFrameObservation(pj, float(rows_j[k]), wpj)))
    return out


def add_noise(correspondences: Sequence[Correspondence], gt: GroundTruth,
              scene: SceneConfig, noise: NoiseConfig,
              rng: np.random.Generator) -> tuple[list[Correspondence], np.ndarray, np.ndarray]:
    """Gaussian pixel noise (before normalization) and per-axis gyro noise.

    Row indices are recomputed from the noisy pixel rows. Returns the noisy
    correspondences plus the measured angular velocities of both views.
    """
    n = len(correspondences)
    pix_i = gt.pixels_i + rng.normal(0.0, noise.pixel_std, size=(n, 2))
    pix_j = gt.pixels_j + rng.normal(0.0, noise.pixel_std, size=(n, 2))
    omega_i_meas = gt.omega_i + rng.normal(0.0, noise.gyro_std, size=3)
    omega_j_meas = gt.omega_j + rng.normal(0.0, noise.gyro_std, size=3)
    lam = scene.readout_s_per_row
    noisy = _build_correspondences(pix_i, pix_i[:, 1], pix_j, pix_j[:, 1],
                                   lam * omega_i_meas, lam * omega_j_meas, scene)
    return noisy, omega_i_meas, omega_j_meas


def inject_outliers(correspondences: Sequence[Correspondence], fraction: float,
                    scene: SceneConfig, rng: np.random.Generator
                    ) -> tuple[list[Correspondence], np.ndarray]:
    """Replace a fraction of pairs with uniform-random image points.

    Returns the corrupted list and the boolean ground-truth inlier labels.
    """
    corrs = list(correspondences)
    n = len(corrs)
    n_out = int(round(fraction * n))
    labels = np.ones(n, dtype=bool)
    for k in rng.choice(n, size=n_out, replace=False):
        labels[k] = False
        c = corrs[k]
        obs = []
        for o in (c.obs_i, c.obs_j):
            u = rng.uniform(0.0, scene.image_w)
            v = rng.uniform(0.0, scene.image_h)
            p = NormalizedPoint((u - scene.cx) / scene.focal, (v - scene.cy) / scene.focal)
            obs.append(RSFrameObservation(p, float(v), o.w_scaled))
        corrs[k] = Correspondence(obs[0], obs[1])
    return corrs, labels
