"""Damped least-squares refinement of a relative pose over epipolar residuals.

Minimizes sum_n C_n(q, t)^2 + w * (|t|^2 - 1)^2 where C_n is the linearized
rolling-shutter epipolar residual, the rotation is a unit quaternion updated
multiplicatively through a 3-parameter tangent increment, and the unit-norm
constraint on t enters as a soft penalty residual (t is renormalized on exit).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation as ScipyRotation

from .errors import DivergenceDetected, InsufficientData
from .geometry import Correspondence, CorrespondenceArrays, RelativePose

_MAX_DAMPING = 1e10


@dataclass(frozen=True)
class RefineConfig:
    max_iterations: int = 100
    gradient_tolerance: float = 1e-10
    step_tolerance: float = 1e-12
    scale_penalty_weight: float = 1.0

    def __post_init__(self):
        for name in ("max_iterations", "gradient_tolerance", "step_tolerance",
                     "scale_penalty_weight"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True, eq=False)
class RefineReport:
    pose: RelativePose
    initial_cost: float
    final_cost: float
    iterations: int
    converged: bool


def _residuals(r: np.ndarray, t: np.ndarray, arrays: CorrespondenceArrays,
               sqrt_w: float) -> np.ndarray:
    g = np.einsum("nab,nb->na", arrays.aj, np.cross(arrays.mj, t))
    c = np.einsum("na,ab,nb->n", g, r, arrays.p)
    return np.append(c, sqrt_w * (t @ t - 1.0))


def _jacobian(r: np.ndarray, t: np.ndarray, arrays: CorrespondenceArrays,
              sqrt_w: float) -> np.ndarray:
    """Analytic Jacobian of the residual vector w.r.t. (theta, t).

    theta is the right-multiplicative rotation increment: R <- R @ exp(skew(theta)).
    dC/dtheta = p x (R^T g),  dC/dt = (Aj^T R p) x mj  with g = Aj (mj x t).
    """
    n = arrays.n
    jac = np.zeros((n + 1, 6))
    g = np.einsum("nab,nb->na", arrays.aj, np.cross(arrays.mj, t))
    jac[:n, :3] = np.cross(arrays.p, np.einsum("ba,nb->na", r, g))
    h = np.einsum("nba,bc,nc->na", arrays.aj, r, arrays.p)
    jac[:n, 3:] = np.cross(h, arrays.mj)
    jac[n, 3:] = 2.0 * sqrt_w * t
    return jac


def refine(inliers: Sequence[Correspondence], initial: RelativePose,
           config: RefineConfig = RefineConfig()) -> RefineReport:
    """Refine a pose over its inlier set; angular velocities stay fixed.

    Damping is multiplied by 10 on each rejected step and divided by 10 on
    each accepted one (initial 1e-4). Raises DivergenceDetected when five
    consecutive retries at maximum damping fail to decrease the cost.
    """
    corrs = list(inliers)
    if len(corrs) < 5:
        raise InsufficientData(f"refinement needs at least 5 inliers, got {len(corrs)}")
    arrays = CorrespondenceArrays(corrs)
    sqrt_w = math.sqrt(config.scale_penalty_weight)

    q = ScipyRotation.from_matrix(initial.rotation)
    t = initial.translation.copy()
    res = _residuals(q.as_matrix(), t, arrays, sqrt_w)
    cost = float(res @ res)
    initial_cost = cost

    damping = 1e-4
    rejects_at_max = 0
    iterations = 0
    converged = False
    for _ in range(config.max_iterations):
        r = q.as_matrix()
        jac = _jacobian(r, t, arrays, sqrt_w)
        grad = jac.T @ res
        if np.max(np.abs(grad)) < config.gradient_tolerance:
            converged = True
            break
        jtj = jac.T @ jac
        while True:
            try:
                delta = np.linalg.solve(jtj + damping * np.eye(6), -grad)
            except np.linalg.LinAlgError:
                delta = None
            if delta is not None:
                q_new = q * ScipyRotation.from_rotvec(delta[:3])
                t_new = t + delta[3:]
                res_new = _residuals(q_new.as_matrix(), t_new, arrays, sqrt_w)
                cost_new = float(res_new @ res_new)
                if cost_new < cost:
                    q, t, res, cost = q_new, t_new, res_new, cost_new
                    damping = max(damping / 10.0, 1e-15)
                    rejects_at_max = 0
                    iterations += 1
                    if np.linalg.norm(delta) < config.step_tolerance:
                        converged = True
                    break
            if damping >= _MAX_DAMPING:
                rejects_at_max += 1
                if rejects_at_max >= 5:
                    raise DivergenceDetected(
                        f"cost {cost:.3e} not reducible at maximum damping")
                break
            damping = min(damping * 10.0, _MAX_DAMPING)
        if converged:
            break

    norm_t = np.linalg.norm(t)
    pose = RelativePose(q.as_matrix(), t / norm_t)
    return RefineReport(pose=pose, initial_cost=initial_cost, final_cost=cost,
                        iterations=iterations, converged=converged)
