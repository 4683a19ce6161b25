"""RANSAC over minimal relative pose solvers.

Hypotheses are scored with the linearized rolling-shutter epipolar residual
(the same model the minimal solver optimizes); for global-shutter data the
per-row factors are identity and the score reduces to the classical
algebraic epipolar residual.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InsufficientData, NoValidHypothesis
from .five_point import triangulate_depths
from .geometry import (Correspondence, CorrespondenceArrays, RelativePose,
                       batch_residuals)


@dataclass(frozen=True)
class RansacConfig:
    inlier_threshold: float = 0.01
    max_iterations: int = 200
    seed: int = 0
    min_sample: int = 5

    def __post_init__(self):
        if self.inlier_threshold <= 0:
            raise ValueError("inlier_threshold must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass(frozen=True, eq=False)
class RansacResult:
    pose: RelativePose
    inlier_mask: np.ndarray
    score: int
    iterations_run: int


class MinimalSolverHandle:
    """Adapter protocol for RANSAC-compatible minimal solvers.

    solve_sample returns candidate poses for one minimal sample (possibly
    empty on degenerate draws); solve_samples may batch many samples at once.
    """

    def solve_sample(self, arrays: CorrespondenceArrays, indices: np.ndarray,
                     r0: np.ndarray) -> list[RelativePose]:
        raise NotImplementedError

    def solve_samples(self, arrays: CorrespondenceArrays, sample_indices: list[np.ndarray],
                      r0: np.ndarray) -> list[list[RelativePose]]:
        return [self.solve_sample(arrays, idx, r0) for idx in sample_indices]


def resolve_translation_sign(pose: RelativePose, arrays: CorrespondenceArrays,
                             mask: Optional[np.ndarray] = None) -> RelativePose:
    """Flip t when the cheirality vote of the (masked) points prefers -t.

    Epipolar scoring is even in the sign of t, so the sign is fixed here by
    counting positive-depth triangulations. Ties keep the input sign.
    """
    if mask is not None:
        arrays = arrays.take(np.flatnonzero(mask))
    if arrays.n == 0:
        return pose
    zi, zj = triangulate_depths(pose.rotation, pose.translation, arrays.mi, arrays.mj)
    pos = int(np.sum((zi > 0) & (zj > 0)))
    zi, zj = triangulate_depths(pose.rotation, -pose.translation, arrays.mi, arrays.mj)
    neg = int(np.sum((zi > 0) & (zj > 0)))
    if neg > pos:
        return RelativePose(pose.rotation, -pose.translation)
    return pose


def ransac(correspondences: Sequence[Correspondence], r0: np.ndarray,
           config: RansacConfig, solver: MinimalSolverHandle,
           trace: Optional[Callable[[int, int, int], None]] = None) -> RansacResult:
    """Fixed-budget RANSAC returning the hypothesis with the most inliers.

    Every candidate returned by the solver in every iteration is scored over
    all correspondences; ties on the inlier count are broken by the smaller
    summed squared inlier residual. Deterministic given (data, config.seed).
    The winner's translation sign is resolved by a cheirality vote over its
    inliers. trace, when given, is called as trace(iteration, iteration_best,
    global_best) after each iteration.
    """
    corrs = list(correspondences)
    n = len(corrs)
    if n < config.min_sample:
        raise InsufficientData(f"need at least {config.min_sample} correspondences, got {n}")
    arrays = CorrespondenceArrays(corrs)
    rng = np.random.default_rng(config.seed)
    samples = [np.sort(rng.choice(n, size=config.min_sample, replace=False))
               for _ in range(config.max_iterations)]
    candidates_per_iter = solver.solve_samples(arrays, samples, r0)

    best_pose = None
    best_score = -1
    best_sumsq = np.inf
    for it, candidates in enumerate(candidates_per_iter):
        iter_best = 0
        if candidates:
            rot = np.stack([c.rotation for c in candidates])
            tr = np.stack([c.translation for c in candidates])
            res = batch_residuals(rot, tr, arrays)
            inl = np.abs(res) <= config.inlier_threshold
            scores = inl.sum(axis=1)
            sumsq = np.where(inl, res * res, 0.0).sum(axis=1)
            k = int(np.lexsort((sumsq, -scores))[0])
            iter_best = int(scores[k])
            if iter_best > best_score or (iter_best == best_score and sumsq[k] < best_sumsq):
                best_pose = candidates[k]
                best_score = iter_best
                best_sumsq = float(sumsq[k])
        if trace is not None:
            trace(it, iter_best, best_score)

    if best_pose is None:
        raise NoValidHypothesis("no iteration produced a real candidate")

    res = batch_residuals(best_pose.rotation, best_pose.translation, arrays)[0]
    mask = np.abs(res) <= config.inlier_threshold
    pose = resolve_translation_sign(best_pose, arrays, mask)
    return RansacResult(pose=pose, inlier_mask=mask, score=int(mask.sum()),
                        iterations_run=config.max_iterations)
