"""Global-shutter five-point relative pose.

Nullspace-of-5x9 formulation: E = x*E1 + y*E2 + z*E3 + E4, with the ten cubic
constraints det(E) = 0 and 2*E*E^T*E - trace(E*E^T)*E = 0 reduced to a 10x10
action matrix for multiplication by z. Eigenvectors give up to ten real
essential-matrix candidates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import AmbiguousDecomposition, DegenerateInput
from .geometry import Correspondence, NormalizedPoint, RelativePose, skew

# Monomial bookkeeping for polynomials in (x, y, z). Degree-1 coefficient
# vectors are laid out [x, y, z, 1]; degree <= 2 vectors use _DEG2 order
# (which doubles as the quotient basis); full degree <= 3 vectors put the ten
# cubics first so the left 10x10 block of the constraint matrix is the pivot block.
_DEG1 = [(1, 0, 0), (0, 1, 0), (0, 0, 1), (0, 0, 0)]
_DEG2 = [(2, 0, 0), (1, 1, 0), (0, 2, 0), (1, 0, 1), (0, 1, 1), (0, 0, 2),
         (1, 0, 0), (0, 1, 0), (0, 0, 1), (0, 0, 0)]
_DEG3 = [(3, 0, 0), (2, 1, 0), (1, 2, 0), (0, 3, 0), (2, 0, 1), (1, 1, 1),
         (0, 2, 1), (1, 0, 2), (0, 1, 2), (0, 0, 3)] + _DEG2

_IDX2 = {m: i for i, m in enumerate(_DEG2)}
_IDX3 = {m: i for i, m in enumerate(_DEG3)}


def _scatter(src_monos, dst_index):
    """0/1 matrix mapping outer-product coefficient entries onto a monomial list."""
    s = np.zeros((len(src_monos), len(dst_index)))
    for k, m in enumerate(src_monos):
        s[k, dst_index[m]] = 1.0
    return s


def _mono_sum(a, b):
    return tuple(x + y for x, y in zip(a, b))


_S11 = _scatter([_mono_sum(a, b) for a in _DEG1 for b in _DEG1], _IDX2)   # (16, 10)
_S21 = _scatter([_mono_sum(a, b) for a in _DEG2 for b in _DEG1], _IDX3)   # (40, 20)

# Multiplication by z maps each basis monomial to either another basis
# monomial or one of the ten cubics (by _DEG3 position).
_Z_TIMES_BASIS = [_mono_sum(m, (0, 0, 1)) for m in _DEG2]


def _mul11(a, b):
    """Product of two degree-1 coefficient stacks (..., 4) -> (..., 10)."""
    outer = np.einsum("...i,...j->...ij", a, b).reshape(*a.shape[:-1], 16)
    return outer @ _S11


def _mul21(a, b):
    """Product of degree-2 (..., 10) by degree-1 (..., 4) stacks -> (..., 20)."""
    outer = np.einsum("...i,...j->...ij", a, b).reshape(*a.shape[:-1], 40)
    return outer @ _S21


def _constraint_matrix(e):
    """Ten cubic constraints on E(x,y,z); e has shape (..., 3, 3, 4)."""
    lead = e.shape[:-3]
    m = np.empty(lead + (10, 20))
    # det(E) via cofactor expansion along the first row
    c00 = _mul11(e[..., 1, 1, :], e[..., 2, 2, :]) - _mul11(e[..., 1, 2, :], e[..., 2, 1, :])
    c01 = _mul11(e[..., 1, 0, :], e[..., 2, 2, :]) - _mul11(e[..., 1, 2, :], e[..., 2, 0, :])
    c02 = _mul11(e[..., 1, 0, :], e[..., 2, 1, :]) - _mul11(e[..., 1, 1, :], e[..., 2, 0, :])
    m[..., 0, :] = (_mul21(c00, e[..., 0, 0, :]) - _mul21(c01, e[..., 0, 1, :])
                    + _mul21(c02, e[..., 0, 2, :]))
    # 2*E*E^T*E - trace(E*E^T)*E, one constraint per entry
    ee_t = np.empty(lead + (3, 3, 10))
    for r in range(3):
        for c in range(3):
            ee_t[..., r, c, :] = sum(_mul11(e[..., r, k, :], e[..., c, k, :]) for k in range(3))
    tr = ee_t[..., 0, 0, :] + ee_t[..., 1, 1, :] + ee_t[..., 2, 2, :]
    for r in range(3):
        for c in range(3):
            acc = sum(2.0 * _mul21(ee_t[..., r, k, :], e[..., k, c, :]) for k in range(3))
            m[..., 1 + 3 * r + c, :] = acc - _mul21(tr, e[..., r, c, :])
    return m


def _action_matrix(x):
    """10x10 multiplication-by-z matrix from reduced tails x of shape (..., 10, 10)."""
    lead = x.shape[:-2]
    act = np.zeros(lead + (10, 10))
    for i, mono in enumerate(_Z_TIMES_BASIS):
        if mono in _IDX2:
            act[..., i, _IDX2[mono]] = 1.0
        else:
            act[..., i, :] = -x[..., _IDX3[mono] , :]
    return act


def _extract_candidates(e_basis, act, imag_tol=1e-6):
    """Real (x, y, z) roots -> essential matrices, Frobenius-normalized."""
    vals, vecs = np.linalg.eig(act)
    out = []
    for k in range(vals.shape[0]):
        w = vecs[:, k]
        if abs(w[9]) < 1e-12:
            continue
        w = w / w[9]
        xyz = w[6:9]
        if np.any(np.abs(xyz.imag) > imag_tol):
            continue
        x, y, z = xyz.real
        e = x * e_basis[0] + y * e_basis[1] + z * e_basis[2] + e_basis[3]
        n = np.linalg.norm(e)
        if n < 1e-12 or not np.all(np.isfinite(e)):
            continue
        out.append(e / n)
    return out


def _as_point_pairs(correspondences) -> list[tuple[NormalizedPoint, NormalizedPoint]]:
    pairs = []
    for c in correspondences:
        if isinstance(c, Correspondence):
            pairs.append((c.obs_i.point, c.obs_j.point))
        else:
            pairs.append((c[0], c[1]))
    return pairs


@dataclass(frozen=True)
class GsMinimalProblem:
    """Exactly five normalized point pairs (view i, view j)."""

    pairs: tuple

    def __post_init__(self):
        pairs = tuple(self.pairs)
        object.__setattr__(self, "pairs", pairs)
        if len(pairs) != 5:
            raise ValueError(f"need exactly 5 point pairs, got {len(pairs)}")
        seen = set()
        for pi, pj in pairs:
            key = (pi.x, pi.y, pj.x, pj.y)
            if key in seen:
                raise ValueError("duplicate point pair in minimal sample")
            seen.add(key)


def nullspace_basis(pts_i: np.ndarray, pts_j: np.ndarray) -> np.ndarray:
    """4-dim nullspace of the epipolar design matrix as four 3x3 matrices.

    pts_i, pts_j: (5, 3) homogeneous points. Raises DegenerateInput when the
    5x9 design matrix is rank-deficient.
    """
    q = np.einsum("nu,nw->nuw", pts_j, pts_i).reshape(5, 9)
    _, s, vt = np.linalg.svd(q)
    if s[0] < 1e-15 or s[4] < 1e-12 * s[0]:
        raise DegenerateInput("five-point design matrix is rank-deficient")
    return vt[5:9][::-1].reshape(4, 3, 3)


def gs_five_point(problem: GsMinimalProblem) -> list[np.ndarray]:
    """Essential-matrix candidates (<= 10) for a five-pair minimal problem."""
    pts_i = np.stack([p.lift() for p, _ in problem.pairs])
    pts_j = np.stack([p.lift() for _, p in problem.pairs])
    e_basis = nullspace_basis(pts_i, pts_j)
    e_stack = np.moveaxis(e_basis, 0, -1)  # (3, 3, 4), coefficient order [x, y, z, 1]
    m = _constraint_matrix(e_stack)
    try:
        x = np.linalg.solve(m[:, :10], m[:, 10:])
    except np.linalg.LinAlgError as exc:
        raise DegenerateInput("cubic constraint system is singular") from exc
    return _extract_candidates(e_basis, _action_matrix(x))


def project_to_essential(e: np.ndarray) -> np.ndarray:
    """Nearest matrix with singular values (s, s, 0)."""
    u, s, vt = np.linalg.svd(e)
    sig = 0.5 * (s[0] + s[1])
    return u @ np.diag([sig, sig, 0.0]) @ vt


def triangulate_depths(r: np.ndarray, t: np.ndarray,
                       pts_i: np.ndarray, pts_j: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares depths (z_i, z_j) with z_i * R m_i + t ~ z_j * m_j.

    pts_i, pts_j: (n, 3) homogeneous points.
    """
    a = np.stack([np.einsum("uw,nw->nu", r, pts_i), -pts_j], axis=-1)  # (n, 3, 2)
    ata = np.einsum("nuk,nul->nkl", a, a)
    atb = np.einsum("nuk,u->nk", a, -t)
    det = ata[:, 0, 0] * ata[:, 1, 1] - ata[:, 0, 1] * ata[:, 1, 0]
    det = np.where(np.abs(det) < 1e-15, np.nan, det)
    zi = (ata[:, 1, 1] * atb[:, 0] - ata[:, 0, 1] * atb[:, 1]) / det
    zj = (ata[:, 0, 0] * atb[:, 1] - ata[:, 1, 0] * atb[:, 0]) / det
    return zi, zj


def cheirality_counts(r1: np.ndarray, r2: np.ndarray, t: np.ndarray,
                      pts_i: np.ndarray, pts_j: np.ndarray) -> list[tuple[int, np.ndarray, np.ndarray]]:
    """Positive-depth vote for the four (R, t) factorization combinations."""
    votes = []
    for r in (r1, r2):
        for tt in (t, -t):
            zi, zj = triangulate_depths(r, tt, pts_i, pts_j)
            votes.append((int(np.sum((zi > 0) & (zj > 0))), r, tt))
    return votes


def decompose_essential(e: np.ndarray, correspondences: Sequence) -> RelativePose:
    """(R, t) from an essential matrix, disambiguated by the cheirality vote.

    correspondences may be Correspondence objects or (point_i, point_j) pairs;
    all of them vote. Raises AmbiguousDecomposition when the two best
    factorizations tie.
    """
    pairs = _as_point_pairs(correspondences)
    pts_i = np.stack([pi.lift() for pi, _ in pairs])
    pts_j = np.stack([pj.lift() for _, pj in pairs])
    u, _, vt = np.linalg.svd(e)
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    w = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    r1 = u @ w @ vt
    r2 = u @ w.T @ vt
    t = u[:, 2]
    votes = cheirality_counts(r1, r2, t, pts_i, pts_j)
    votes.sort(key=lambda v: v[0], reverse=True)
    if votes[0][0] == votes[1][0]:
        raise AmbiguousDecomposition(
            f"two factorizations tie with {votes[0][0]} positive-depth points")
    _, r, tt = votes[0]
    return RelativePose(r, tt / np.linalg.norm(tt))


def essential_from_pose(pose: RelativePose) -> np.ndarray:
    """Classical global-shutter essential matrix skew(t) @ R."""
    return skew(pose.translation) @ pose.rotation
