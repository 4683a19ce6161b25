"""Minimal solver for relative pose from five rolling-shutter correspondences
plus gyroscope data and an initial rotation.

The five epipolar constraints are bilinear in the unknowns (a, t) — a is the
rotation correction applied as R0 @ (I + skew(a)), t the unit translation —
and the sixth equation is |t|^2 - 1. A precomputed elimination template
reduces the instance coefficients to a 20x20 action matrix whose
eigenvectors carry all candidate roots.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import DegenerateInput, NumericalFailure, TemplateFormatError
from .geometry import (Correspondence, CorrespondenceArrays, RelativePose,
                       nearest_rotation, skew, skew_many, unit)

TEMPLATE_MAGIC = "rspose-elimination-template"
TEMPLATE_VERSION = 1
N_UNKNOWNS = 6
QUOTIENT_DIM = 20
IMAG_TOL = 1e-6
PIVOT_TOL = 1e-12

VARIABLE_NAMES = ("a1", "a2", "a3", "t1", "t2", "t3")

#: Monomial support of one epipolar equation, as exponent tuples over
#: (a1, a2, a3, t1, t2, t3): the three t-linear terms then the nine a x t terms.
EPIPOLAR_MONOMIALS = tuple(
    [tuple(1 if i == 3 + k else 0 for i in range(6)) for k in range(3)]
    + [tuple((1 if i == l else 0) + (1 if i == 3 + k else 0) for i in range(6))
       for l in range(3) for k in range(3)]
)

#: The scale constraint |t|^2 - 1 as (monomial, coefficient) pairs.
CONSTRAINT_TERMS = tuple(
    [(tuple(2 if i == 3 + k else 0 for i in range(6)), 1.0) for k in range(3)]
    + [((0,) * 6, -1.0)]
)


@dataclass(frozen=True)
class MinimalProblem:
    """Exactly five correspondences plus the initial relative rotation R0."""

    correspondences: tuple
    r0: np.ndarray

    def __post_init__(self):
        corrs = tuple(self.correspondences)
        object.__setattr__(self, "correspondences", corrs)
        object.__setattr__(self, "r0", np.asarray(self.r0, dtype=float))
        if len(corrs) != 5:
            raise ValueError(f"need exactly 5 correspondences, got {len(corrs)}")
        if self.r0.shape != (3, 3):
            raise ValueError("r0 must be a 3x3 rotation matrix")


@dataclass(frozen=True, eq=False)
class PolynomialSystem:
    """Six equations as coefficient maps keyed by exponent tuple."""

    equations: tuple

    def evaluate(self, a, t) -> np.ndarray:
        """Values of all six polynomials at (a, t)."""
        x = np.concatenate([np.asarray(a, dtype=float), np.asarray(t, dtype=float)])
        out = np.zeros(len(self.equations))
        for e, eq in enumerate(self.equations):
            for mono, c in eq.items():
                out[e] += c * np.prod(x ** np.array(mono))
        return out

    def coefficient_inf_norms(self) -> np.ndarray:
        return np.array([max(abs(c) for c in eq.values()) for eq in self.equations])


@dataclass(frozen=True, eq=False)
class SolutionSet:
    """Candidate poses plus the raw action-matrix roots that produced them.

    roots holds all 20 eigen-roots as complex (a, t) vectors in eigenvalue
    order; real_mask flags the ones that survived the imaginary-part filter
    (candidates and raw_roots are aligned and contain only those).
    """

    candidates: list
    raw_roots: list
    roots: np.ndarray
    real_mask: np.ndarray


def epipolar_coefficients(arrays: CorrespondenceArrays, r0: np.ndarray) -> np.ndarray:
    """Per-correspondence coefficient rows over EPIPOLAR_MONOMIALS, shape (n, 12).

    With p = Ai @ mi and G = Aj^T @ R0 the equation is
    t . (-skew(mj) G p) + t . (skew(mj) G skew(p)) a.
    """
    g = np.einsum("nba,bc->nac", arrays.aj, r0)
    sm = skew_many(arrays.mj)
    lin = -np.einsum("nab,nbc,nc->na", sm, g, arrays.p)
    bil = np.einsum("nab,nbc,ncd->nad", sm, g, skew_many(arrays.p))
    # bilinear block ordered a-major: coefficient of a_l t_k is bil[k, l]
    return np.concatenate([lin, np.swapaxes(bil, 1, 2).reshape(-1, 9)], axis=1)


def build_system(problem: MinimalProblem) -> PolynomialSystem:
    """Symbolic-coefficient form of the six instance equations."""
    arrays = CorrespondenceArrays(problem.correspondences)
    coeffs = epipolar_coefficients(arrays, problem.r0)
    eqs = []
    for row in coeffs:
        eqs.append({m: float(c) for m, c in zip(EPIPOLAR_MONOMIALS, row) if c != 0.0})
    eqs.append({m: c for m, c in CONSTRAINT_TERMS})
    return PolynomialSystem(tuple(eqs))


class EliminationTemplate:
    """Precomputed reduction recipe: multiplier rows, column order, basis.

    Columns are ordered with the probe instance's pivot monomials first; the
    20-monomial basis spans the quotient and contains 1 and all six unknowns.
    """

    def __init__(self, data: dict):
        if data.get("magic") != TEMPLATE_MAGIC:
            raise TemplateFormatError(f"bad magic header {data.get('magic')!r}")
        if data.get("version") != TEMPLATE_VERSION:
            raise TemplateFormatError(
                f"unsupported template version {data.get('version')!r} "
                f"(expected {TEMPLATE_VERSION})")
        if tuple(data["variables"]) != VARIABLE_NAMES:
            raise TemplateFormatError("unexpected variable order")
        self.action_variable = data["action_variable"]
        self.columns = [tuple(m) for m in data["columns"]]
        self.rows = [(int(e), tuple(m)) for e, m in data["rows"]]
        self.n_pivot = int(data["n_pivot"])
        self.basis = [tuple(m) for m in data["basis"]]
        self.generated = dict(data.get("generated", {}))
        if len(self.basis) != QUOTIENT_DIM:
            raise TemplateFormatError(f"basis has {len(self.basis)} monomials, expected 20")
        if len(self.rows) != self.n_pivot:
            raise TemplateFormatError("template is not square over its pivot block")
        self._prepare()

    def _prepare(self):
        col_index = {m: i for i, m in enumerate(self.columns)}
        act = tuple(1 if name == self.action_variable else 0 for name in VARIABLE_NAMES)
        self.action_index = VARIABLE_NAMES.index(self.action_variable)

        fill_r, fill_c, fill_eq, fill_k = [], [], [], []
        const_r, const_c, const_v = [], [], []
        for r, (eq, mult) in enumerate(self.rows):
            if eq < 5:
                for k, mono in enumerate(EPIPOLAR_MONOMIALS):
                    prod = tuple(a + b for a, b in zip(mult, mono))
                    fill_r.append(r)
                    fill_c.append(col_index[prod])
                    fill_eq.append(eq)
                    fill_k.append(k)
            else:
                for mono, c in CONSTRAINT_TERMS:
                    prod = tuple(a + b for a, b in zip(mult, mono))
                    const_r.append(r)
                    const_c.append(col_index[prod])
                    const_v.append(c)
        self._fill = (np.array(fill_r), np.array(fill_c),
                      np.array(fill_eq), np.array(fill_k))
        self._const = (np.array(const_r), np.array(const_c), np.array(const_v))

        n_rest = len(self.columns) - self.n_pivot

        def locate(mono):
            c = col_index[mono]
            if c < self.n_pivot:
                return ("pivot", c)
            return ("rest", c - self.n_pivot)

        self._basis_loc = [locate(b) for b in self.basis]
        self._shift_loc = [locate(tuple(a + b for a, b in zip(b, act))) for b in self.basis]
        self.n_rest = n_rest
        base_index = {b: i for i, b in enumerate(self.basis)}
        one = (0,) * 6
        self._one_pos = base_index[one]
        self._var_pos = [base_index[tuple(1 if i == k else 0 for i in range(6))]
                         for k in range(6)]

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.rows), len(self.columns))

    def fill(self, coeffs: np.ndarray) -> np.ndarray:
        """Numeric template matrices for coefficient stacks of shape (..., 5, 12)."""
        lead = coeffs.shape[:-2]
        a = np.zeros(lead + self.shape)
        fr, fc, feq, fk = self._fill
        a[..., fr, fc] = coeffs[..., feq, fk]
        cr, cc, cv = self._const
        a[..., cr, cc] = cv
        return a

    def gathered_forms(self, x: np.ndarray, locs) -> np.ndarray:
        """Normal-form rows over the rest-columns for located monomials.

        x holds the reduced pivot tails, shape (..., n_pivot, n_rest).
        """
        lead = x.shape[:-2]
        out = np.zeros(lead + (len(locs), self.n_rest))
        for i, (kind, idx) in enumerate(locs):
            if kind == "pivot":
                out[..., i, :] = -x[..., idx, :]
            else:
                out[..., i, idx] = 1.0
        return out

    def action_matrices(self, x: np.ndarray) -> np.ndarray:
        """Action matrices C with C @ NF(basis) = NF(action_var * basis)."""
        y = self.gathered_forms(x, self._basis_loc)
        z = self.gathered_forms(x, self._shift_loc)
        gram = np.einsum("...ik,...jk->...ij", y, y)
        rhs = np.einsum("...ik,...jk->...ij", z, y)
        return np.linalg.solve(np.swapaxes(gram, -1, -2),
                               np.swapaxes(rhs, -1, -2)).swapaxes(-1, -2)

    def roots_from_action(self, act: np.ndarray) -> np.ndarray:
        """All 20 roots (complex, eigenvalue-sorted) for action stacks (..., 20, 20).

        Eigenvectors carry the basis monomials evaluated at each root; after
        normalizing by the constant monomial's entry the six unknowns are read
        off directly. Output shape (..., 20, 6).
        """
        vals, vecs = np.linalg.eig(act)
        order = np.lexsort((vals.imag, vals.real), axis=-1)
        vecs = np.take_along_axis(vecs, order[..., None, :], axis=-1)
        denom = vecs[..., self._one_pos, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            scaled = vecs / denom[..., None, :]
        return np.stack([scaled[..., p, :] for p in self._var_pos], axis=-1)

    def to_dict(self) -> dict:
        return {
            "magic": TEMPLATE_MAGIC,
            "version": TEMPLATE_VERSION,
            "variables": list(VARIABLE_NAMES),
            "monomial_order": "grevlex",
            "action_variable": self.action_variable,
            "columns": [list(m) for m in self.columns],
            "rows": [[e, list(m)] for e, m in self.rows],
            "n_pivot": self.n_pivot,
            "basis": [list(m) for m in self.basis],
            "generated": self.generated,
        }

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def from_file(cls, path) -> "EliminationTemplate":
        try:
            with open(path) as f:
                data = json.load(f)
        except json.JSONDecodeError as exc:
            raise TemplateFormatError(f"template file is not valid JSON: {exc}") from exc
        return cls(data)


_DEFAULT_TEMPLATE: Optional[EliminationTemplate] = None


def load_template(path=None) -> EliminationTemplate:
    """The packaged template, cached; or an explicit file when path is given."""
    global _DEFAULT_TEMPLATE
    if path is not None:
        return EliminationTemplate.from_file(path)
    if _DEFAULT_TEMPLATE is None:
        ref = resources.files("rspose").joinpath("data/rs_template.json")
        with resources.as_file(ref) as p:
            _DEFAULT_TEMPLATE = EliminationTemplate.from_file(p)
    return _DEFAULT_TEMPLATE


def _reduce_careful(a: np.ndarray, n_pivot: int) -> np.ndarray:
    """Single-instance reduction with pivot checks and a QR fallback."""
    norms = np.max(np.abs(a), axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateInput("template row vanished (repeated or degenerate data)")
    a = a / norms
    block = a[:, :n_pivot]
    lu, piv = scipy.linalg.lu_factor(block, check_finite=False)
    diag = np.abs(np.diag(lu))
    if diag.min() > PIVOT_TOL:
        return scipy.linalg.lu_solve((lu, piv), a[:, n_pivot:], check_finite=False)
    # pivot collapsed: retry once with column-pivoted QR on the pivot block
    q, r, perm = scipy.linalg.qr(block, pivoting=True, mode="economic")
    rdiag = np.abs(np.diag(r))
    if rdiag.min() <= PIVOT_TOL * rdiag.max():
        raise NumericalFailure(
            f"reduction pivot below threshold (lu {diag.min():.2e}, qr ratio "
            f"{rdiag.min() / rdiag.max():.2e})")
    x_perm = scipy.linalg.solve_triangular(r, q.T @ a[:, n_pivot:], check_finite=False)
    x = np.empty_like(x_perm)
    x[perm] = x_perm
    return x


def _roots_to_solutions(roots: np.ndarray, r0: np.ndarray,
                        system: PolynomialSystem) -> SolutionSet:
    """Filter complex roots, back-substitute, convert survivors to poses."""
    real_mask = np.zeros(len(roots), dtype=bool)
    poses = []
    raw = []
    norms = system.coefficient_inf_norms()
    for k, root in enumerate(roots):
        if not np.all(np.isfinite(root.real)) or np.any(np.abs(root.imag) > IMAG_TOL):
            continue
        a = root.real[:3]
        t = root.real[3:]
        tn = np.linalg.norm(t)
        if tn < 1e-9:
            continue
        t = t / tn
        vals = system.evaluate(a, t)
        if np.any(np.abs(vals) > 1e-6 * norms):
            continue
        try:
            rot = nearest_rotation(r0 @ (np.eye(3) + skew(a)))
            pose = RelativePose(rot, t)
        except (DegenerateInput, ValueError):
            continue
        real_mask[k] = True
        poses.append(pose)
        raw.append((a.copy(), t.copy()))
    return SolutionSet(candidates=poses, raw_roots=raw, roots=roots, real_mask=real_mask)


def solve(problem: MinimalProblem, template: Optional[EliminationTemplate] = None) -> SolutionSet:
    """All real candidate poses of a minimal instance.

    Fills the elimination template with the instance coefficients, reduces,
    eigendecomposes the action matrix, and keeps roots whose imaginary parts
    are below 1e-6 and that back-substitute into the polynomial system.
    Raises NumericalFailure when the reduction collapses even under the QR
    fallback and DegenerateInput when no real root survives.
    """
    if template is None:
        template = load_template()
    arrays = CorrespondenceArrays(problem.correspondences)
    coeffs = epipolar_coefficients(arrays, problem.r0)
    a = template.fill(coeffs)
    x = _reduce_careful(a, template.n_pivot)
    try:
        act = template.action_matrices(x)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("quotient basis Gram matrix is singular") from exc
    roots = template.roots_from_action(act)
    system = build_system(problem)
    solution = _roots_to_solutions(roots, problem.r0, system)
    if not solution.candidates:
        raise DegenerateInput("no real root survived filtering")
    return solution
