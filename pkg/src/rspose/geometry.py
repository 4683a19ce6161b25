"""Rotation representations, rolling-shutter essential matrices, and pose error metrics.

Conventions used throughout the package:

- Matrices are row-major and points are column vectors (points transform as R @ p).
- A relative pose (R, t) maps camera-i coordinates to camera-j coordinates,
  X_j = R @ X_i + t, and t is kept at unit norm (direction only).
- The row index v counts pixel rows from the top of the image (v = 0 is the
  first row read out) and is used unnormalized.
- w_scaled is the angular velocity premultiplied by the readout time
  (radians per row), so v * w_scaled is an angle in radians.
- "exact" instant-rotation model: Cayley transform of v * w_scaled.
  "linearized" model: I + v * skew(w_scaled).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import DegenerateInput

RotationModel = Literal["exact", "linearized"]

#: Sanity bound on normalized image coordinates (|x|, |y| below this for any
#: physically plausible field of view).
MAX_NORMALIZED_COORD = 10.0


def skew(v) -> np.ndarray:
    """Skew-symmetric matrix S with S @ u == cross(v, u)."""
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def cayley_rotation(v) -> np.ndarray:
    """Rotation from the Cayley transform of a 3-vector.

    R = ((1 - v.v) I + 2 skew(v) + 2 v v^T) / (1 + v.v); rotates by
    2*atan(|v|) about v. Exact on SO(3) for any finite v.
    """
    v = np.asarray(v, dtype=float)
    k = 1.0 + v @ v
    return ((1.0 - v @ v) * np.eye(3) + 2.0 * skew(v) + 2.0 * np.outer(v, v)) / k


def linearized_rotation(v, row: float) -> np.ndarray:
    """First-order instant-rotation model I + row * skew(v); not orthonormal."""
    return np.eye(3) + float(row) * skew(np.asarray(v, dtype=float))


def axis_angle_rotation(axis, angle_rad: float) -> np.ndarray:
    """Rodrigues rotation about a (not necessarily unit) axis."""
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0.0:
        return np.eye(3)
    axis = axis / n
    s = skew(axis)
    return np.eye(3) + math.sin(angle_rad) * s + (1.0 - math.cos(angle_rad)) * (s @ s)


def is_rotation(m, tol: float = 1e-9) -> bool:
    """True if m is orthonormal with determinant +1 within tol (Frobenius)."""
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        return False
    return (np.linalg.norm(m.T @ m - np.eye(3)) <= tol
            and abs(np.linalg.det(m) - 1.0) <= tol)


def nearest_rotation(m) -> np.ndarray:
    """Closest rotation to m in Frobenius norm (SVD with det-sign correction)."""
    m = np.asarray(m, dtype=float)
    u, s, vt = np.linalg.svd(m)
    if s[-1] < 1e-12:
        raise DegenerateInput(f"matrix is singular or near-singular (smallest sv {s[-1]:.3e})")
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def unit(v) -> np.ndarray:
    """v / |v|; raises on zero vectors."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("cannot normalize the zero vector")
    return v / n


@dataclass(frozen=True)
class NormalizedPoint:
    """Image point in normalized camera coordinates (focal length divided out)."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("normalized coordinates must be finite")
        if abs(self.x) >= MAX_NORMALIZED_COORD or abs(self.y) >= MAX_NORMALIZED_COORD:
            raise ValueError(f"normalized point ({self.x}, {self.y}) outside plausible FOV")

    def lift(self) -> np.ndarray:
        """Homogeneous coordinates [x, y, 1]."""
        return np.array([self.x, self.y, 1.0])


@dataclass(frozen=True, eq=False)
class RSFrameObservation:
    """One observation in one rolling-shutter view.

    row is the pixel row index (from the top row, v = 0); w_scaled is the
    view's angular velocity times the readout time, in radians per row.
    Arrays are treated as immutable.
    """

    point: NormalizedPoint
    row: float
    w_scaled: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w_scaled", np.asarray(self.w_scaled, dtype=float))
        if self.w_scaled.shape != (3,) or not np.all(np.isfinite(self.w_scaled)):
            raise ValueError("w_scaled must be a finite 3-vector")

    def instant_factor(self) -> np.ndarray:
        """Linearized per-row perturbation I + row * skew(w_scaled)."""
        return linearized_rotation(self.w_scaled, self.row)


@dataclass(frozen=True, eq=False)
class Correspondence:
    """A matched observation pair across the two views."""

    obs_i: RSFrameObservation
    obs_j: RSFrameObservation


@dataclass(frozen=True, eq=False)
class RelativePose:
    """Relative rotation plus unit translation direction (camera i to camera j)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))
        if not is_rotation(self.rotation):
            raise ValueError("rotation is not orthonormal with det +1 within 1e-9")
        if abs(np.linalg.norm(self.translation) - 1.0) > 1e-9:
            raise ValueError("translation must have unit norm within 1e-9")

    def inverse(self) -> "RelativePose":
        return RelativePose(self.rotation.T, -(self.rotation.T @ self.translation))


def rs_rotation(a_rot, corr: Correspondence, model: RotationModel = "linearized") -> np.ndarray:
    """Row-dependent relative rotation between the two observations of corr.

    Composes the relative rotation a_rot with each view's instant rotation:
    R(v_j * w'_j)^T @ a_rot @ R(v_i * w'_i). In exact mode the instant
    rotations are Cayley transforms of row * w_scaled (the synthetic
    generator's convention); in linearized mode each factor is
    I + row * skew(w_scaled) and the result is generally not orthonormal.
    """
    a_rot = np.asarray(a_rot, dtype=float)
    oi, oj = corr.obs_i, corr.obs_j
    if model == "exact":
        ri = cayley_rotation(oi.row * oi.w_scaled)
        rj = cayley_rotation(oj.row * oj.w_scaled)
    elif model == "linearized":
        ri = oi.instant_factor()
        rj = oj.instant_factor()
    else:
        raise ValueError(f"unknown rotation model {model!r}")
    return rj.T @ a_rot @ ri


def rs_essential(pose: RelativePose, corr: Correspondence,
                 model: RotationModel = "linearized") -> np.ndarray:
    """Rolling-shutter essential matrix skew(t) @ rs_rotation for this pair."""
    return skew(pose.translation) @ rs_rotation(pose.rotation, corr, model)


def epipolar_residual(pose: RelativePose, corr: Correspondence,
                      model: RotationModel = "linearized") -> float:
    """Signed algebraic epipolar residual m_j . (E @ m_i) in normalized coordinates."""
    e = rs_essential(pose, corr, model)
    return float(corr.obs_j.point.lift() @ e @ corr.obs_i.point.lift())


class CorrespondenceArrays:
    """Column-packed view of a correspondence list for vectorized evaluation.

    Precomputes, per correspondence n: homogeneous points mi/mj (n, 3), the
    linearized per-row factors ai/aj (n, 3, 3), and p = ai @ mi.
    """

    def __init__(self, correspondences):
        corrs = list(correspondences)
        n = len(corrs)
        self.n = n
        self.mi = np.stack([c.obs_i.point.lift() for c in corrs]) if n else np.zeros((0, 3))
        self.mj = np.stack([c.obs_j.point.lift() for c in corrs]) if n else np.zeros((0, 3))
        self.vi = np.array([c.obs_i.row for c in corrs], dtype=float)
        self.vj = np.array([c.obs_j.row for c in corrs], dtype=float)
        self.wi = np.stack([c.obs_i.w_scaled for c in corrs]) if n else np.zeros((0, 3))
        self.wj = np.stack([c.obs_j.w_scaled for c in corrs]) if n else np.zeros((0, 3))
        self.ai = np.eye(3) + self.vi[:, None, None] * skew_many(self.wi)
        self.aj = np.eye(3) + self.vj[:, None, None] * skew_many(self.wj)
        self.p = np.einsum("nab,nb->na", self.ai, self.mi)

    def take(self, indices) -> "CorrespondenceArrays":
        out = object.__new__(CorrespondenceArrays)
        out.n = len(indices)
        for name in ("mi", "mj", "vi", "vj", "wi", "wj", "ai", "aj", "p"):
            setattr(out, name, getattr(self, name)[indices])
        return out


def skew_many(v: np.ndarray) -> np.ndarray:
    """Stacked skew-symmetric matrices for v of shape (..., 3)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    out[..., 0, 1] = -z
    out[..., 0, 2] = y
    out[..., 1, 0] = z
    out[..., 1, 2] = -x
    out[..., 2, 0] = -y
    out[..., 2, 1] = x
    return out


def batch_residuals(rotations: np.ndarray, translations: np.ndarray,
                    arrays: CorrespondenceArrays) -> np.ndarray:
    """Linearized-model epipolar residuals, shape (k, n) for k poses over n pairs."""
    rotations = rotations.reshape(-1, 3, 3)
    translations = translations.reshape(-1, 3)
    q = np.einsum("kab,nb->kna", rotations, arrays.p)
    h = np.einsum("nca,knc->kna", arrays.aj, q)
    cr = np.cross(arrays.mj[None, :, :], translations[:, None, :])
    return np.einsum("kna,kna->kn", cr, h)


def rotation_error(gt, est) -> float:
    """Angle in degrees between two rotations, acos((trace(gt^T est) - 1) / 2)."""
    gt = np.asarray(gt, dtype=float)
    est = np.asarray(est, dtype=float)
    c = (np.trace(gt.T @ est) - 1.0) / 2.0
    # floating-point trace can leave [-1, 1] by ~1e-15
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def translation_error(gt, est) -> float:
    """Geodesic angle in degrees between two unit translation directions."""
    gt = np.asarray(gt, dtype=float)
    est = np.asarray(est, dtype=float)
    for name, v in (("gt", gt), ("est", est)):
        if abs(np.linalg.norm(v) - 1.0) > 1e-6:
            raise ValueError(f"{name} translation is not unit length (norm {np.linalg.norm(v):.8f})")
    c = float(gt @ est)
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))
