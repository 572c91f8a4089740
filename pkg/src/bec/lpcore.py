"""Dense linear-programming kernel for multiplier polyhedra.

Everything here operates on a Polyhedron: equality rows, inequality
rows, and per-coordinate nonnegativity flags.  The solver is a
two-phase primal simplex over a dense tableau with Bland's rule, which
is slow in theory and entirely adequate for the handful of multipliers
these problems carry.  Determinism matters more than speed: identical
inputs must yield identical certificates.

Tolerances are centralized here.  FEAS_TOL decides feasibility and
zero-versus-positive questions; DEDUP_TOL merges vertices.  A decision
made by a quantity inside (FEAS_TOL, 10*FEAS_TOL] is reported with
marginal=True rather than silently trusted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import List, Optional, Tuple

import numpy as np

__all__ = [
    "FEAS_TOL",
    "DEDUP_TOL",
    "LPError",
    "Polyhedron",
    "LPOutcome",
    "lp_feasible",
    "lp_optimize",
    "cone_only_zero",
    "vertices",
]

FEAS_TOL = 1e-9
DEDUP_TOL = 1e-7

_PIVOT_EPS = 1e-10
_MAX_PIVOTS = 10_000


class LPError(RuntimeError):
    """Numeric failure inside the LP kernel (cycling guard, bad witness)."""


def _as_rows(pair, num_vars, label):
    if pair is None:
        return np.zeros((0, num_vars)), np.zeros(0)
    A, b = pair
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if A.size == 0:
        A = A.reshape(0, num_vars)
    if A.shape[1] != num_vars:
        raise ValueError(f"{label} matrix width {A.shape[1]} != num_vars {num_vars}")
    if A.shape[0] != b.shape[0]:
        raise ValueError(f"{label} matrix/vector row mismatch")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise ValueError(f"{label} rows contain non-finite entries")
    return A, b


@dataclass(frozen=True)
class Polyhedron:
    """Feasible set {l : A_eq l = b_eq, A_in l <= b_in, l_i >= 0 where flagged}."""

    num_vars: int
    eq: Optional[tuple] = None
    ineq: Optional[tuple] = None
    nonneg_mask: Optional[tuple] = None

    def __post_init__(self):
        if self.num_vars < 0:
            raise ValueError("num_vars must be nonnegative")
        object.__setattr__(self, "eq", _as_rows(self.eq, self.num_vars, "eq"))
        object.__setattr__(self, "ineq", _as_rows(self.ineq, self.num_vars, "ineq"))
        mask = self.nonneg_mask
        if mask is None:
            mask = (False,) * self.num_vars
        mask = tuple(bool(v) for v in mask)
        if len(mask) != self.num_vars:
            raise ValueError("nonneg_mask length != num_vars")
        object.__setattr__(self, "nonneg_mask", mask)

    def max_violation(self, point) -> float:
        """Largest constraint violation at point (0 means feasible)."""
        z = np.asarray(point, dtype=float)
        if z.shape != (self.num_vars,):
            raise ValueError("point has the wrong dimension")
        worst = 0.0
        A, b = self.eq
        if A.shape[0]:
            worst = max(worst, float(np.max(np.abs(A @ z - b))))
        A, b = self.ineq
        if A.shape[0]:
            worst = max(worst, float(np.max(A @ z - b)))
        for i, flag in enumerate(self.nonneg_mask):
            if flag:
                worst = max(worst, -float(z[i]))
        return worst

    def contains(self, point, tol: float = FEAS_TOL) -> bool:
        return self.max_violation(point) <= tol


@dataclass(frozen=True)
class LPOutcome:
    """Result of one LP call.

    status "optimal": value and a feasible witness (the optimizer).
    status "infeasible": value is the phase-1 infeasibility measure.
    status "unbounded": witness is a recession direction of unit 1-norm
    along which the objective improves without bound.
    marginal flags decisions made by a quantity inside
    (FEAS_TOL, 10*FEAS_TOL], per the borderline-certificate policy.
    """

    status: str
    value: float
    witness: Optional[np.ndarray]
    marginal: bool = False


def _marginal_band(q: float) -> bool:
    return FEAS_TOL < q <= 10.0 * FEAS_TOL


# ---------------------------------------------------------------------------
# tableau machinery


def _pivot(T, basis, row, col):
    T[row] /= T[row, col]
    for i in range(T.shape[0]):
        if i != row:
            f = T[i, col]
            if f != 0.0:
                T[i] -= f * T[row]
    basis[row] = col


def _run_simplex(T, basis, ncols) -> Tuple[str, int]:
    """Minimize the cost row in place. Bland's rule on entering and leaving."""
    m = T.shape[0] - 1
    for _ in range(_MAX_PIVOTS):
        enter = -1
        for j in range(ncols):
            if T[-1, j] < -_PIVOT_EPS:
                enter = j
                break
        if enter < 0:
            return "optimal", -1
        leave = -1
        best = math.inf
        for i in range(m):
            a = T[i, enter]
            if a > _PIVOT_EPS:
                r = T[i, -1] / a
                if r < best - 1e-12 or (
                    abs(r - best) <= 1e-12 and (leave < 0 or basis[i] < basis[leave])
                ):
                    best = r
                    leave = i
        if leave < 0:
            return "unbounded", enter
        _pivot(T, basis, leave, enter)
    raise LPError("simplex cycling guard exceeded")


def _standardize(P: Polyhedron):
    """Split unsigned coordinates and add slacks.

    Returns (A, b, colmap, n_real) where colmap[j] = (var_index, sign)
    for structural columns and (-1, 0) for slacks, and n_real counts all
    structural plus slack columns.
    """
    Aeq, beq = P.eq
    Ain, bin_ = P.ineq
    colmap = []
    for i in range(P.num_vars):
        colmap.append((i, 1.0))
        if not P.nonneg_mask[i]:
            colmap.append((i, -1.0))
    nstruct = len(colmap)
    nin = Ain.shape[0]
    rows = Aeq.shape[0] + nin
    A = np.zeros((rows, nstruct + nin))
    b = np.concatenate([beq, bin_])
    stacked = np.vstack([Aeq, Ain]) if rows else np.zeros((0, P.num_vars))
    for j, (vi, sg) in enumerate(colmap):
        A[:, j] = sg * stacked[:, vi]
    for k in range(nin):
        A[Aeq.shape[0] + k, nstruct + k] = 1.0
        colmap.append((-1, 0.0))
    return A, b, colmap, nstruct + nin


def _phase1(A, b):
    """Drive artificials to zero. Returns (T, basis, obj) on the full tableau."""
    A = A.copy()
    b = b.copy()
    m, n = A.shape
    for i in range(m):
        if b[i] < 0:
            A[i] *= -1.0
            b[i] *= -1.0
    basis = [-1] * m
    # reuse clean unit columns (untouched slacks) as the starting basis
    for j in range(n):
        col = A[:, j]
        nz = np.nonzero(np.abs(col) > 1e-14)[0]
        if len(nz) == 1 and abs(col[nz[0]] - 1.0) < 1e-14 and basis[nz[0]] < 0:
            basis[nz[0]] = j
    n_art = sum(1 for v in basis if v < 0)
    T = np.zeros((m + 1, n + n_art + 1))
    T[:m, :n] = A
    T[:m, -1] = b
    k = n
    for i in range(m):
        if basis[i] < 0:
            T[i, k] = 1.0
            basis[i] = k
            k += 1
    # phase-1 reduced costs: sum of the artificial rows, negated
    for i in range(m):
        if basis[i] >= n:
            T[-1, :] -= T[i, :]
    T[-1, basis] = 0.0
    status, _ = _run_simplex(T, basis, n + n_art)
    if status != "optimal":
        raise LPError("phase 1 reported unbounded, which cannot happen")
    obj = -T[m, -1]
    return T, basis, n, obj


def _drop_artificials(T, basis, n_real):
    """Pivot basic artificials out, drop redundant rows, slice columns."""
    m = T.shape[0] - 1
    keep = []
    for i in range(m):
        if basis[i] >= n_real:
            piv = -1
            for j in range(n_real):
                if abs(T[i, j]) > 1e-9:
                    piv = j
                    break
            if piv < 0:
                continue  # redundant row
            _pivot(T, basis, i, piv)
        keep.append(i)
    rows = keep + [m]
    T2 = T[np.ix_(rows, list(range(n_real)) + [T.shape[1] - 1])].copy()
    basis2 = [basis[i] for i in keep]
    return T2, basis2


def _phase2(T, basis, cost):
    m = T.shape[0] - 1
    n = T.shape[1] - 1
    T[-1, :] = 0.0
    T[-1, :n] = cost
    for i in range(m):
        cb = cost[basis[i]]
        if cb != 0.0:
            T[-1, :] -= cb * T[i, :]
    return _run_simplex(T, basis, n)


def _extract(T, basis, colmap, num_vars):
    x = np.zeros(num_vars)
    m = T.shape[0] - 1
    for i in range(m):
        if basis[i] >= len(colmap):
            continue  # artificial left basic at value zero
        vi, sg = colmap[basis[i]]
        if vi >= 0:
            x[vi] += sg * T[i, -1]
    return x


def lp_feasible(P: Polyhedron) -> LPOutcome:
    """Decide whether P is empty; feasible outcomes carry a witness point."""
    A, b, colmap, n_real = _standardize(P)
    T, basis, _, obj = _phase1(A, b)
    if obj > FEAS_TOL:
        return LPOutcome("infeasible", obj, None, marginal=_marginal_band(obj))
    x = _extract(T, basis, colmap, P.num_vars)
    if not P.contains(x, FEAS_TOL):
        raise LPError("phase-1 witness failed re-verification")
    return LPOutcome("optimal", obj, x)


def lp_optimize(c, P: Polyhedron, sense: str = "min") -> LPOutcome:
    """Optimize c over P. Unbounded outcomes witness a recession direction."""
    if sense not in ("min", "max"):
        raise ValueError("sense must be 'min' or 'max'")
    c = np.asarray(c, dtype=float)
    if c.shape != (P.num_vars,):
        raise ValueError("objective has the wrong dimension")
    A, b, colmap, n_real = _standardize(P)
    T, basis, _, obj = _phase1(A, b)
    if obj > FEAS_TOL:
        return LPOutcome("infeasible", obj, None, marginal=_marginal_band(obj))
    T, basis = _drop_artificials(T, basis, n_real)
    cost = np.zeros(n_real)
    for j, (vi, sg) in enumerate(colmap[:n_real]):
        if vi >= 0:
            cost[j] = sg * c[vi] * (1.0 if sense == "min" else -1.0)
    status, enter = _phase2(T, basis, cost)
    if status == "unbounded":
        d = np.zeros(P.num_vars)
        vi, sg = colmap[enter]
        if vi >= 0:
            d[vi] += sg
        for i in range(T.shape[0] - 1):
            vj, sj = colmap[basis[i]]
            if vj >= 0:
                d[vj] -= sj * T[i, enter]
        nrm = float(np.sum(np.abs(d)))
        if nrm <= FEAS_TOL:
            raise LPError("unbounded ray has no structural component")
        d /= nrm
        val = math.inf if sense == "max" else -math.inf
        return LPOutcome("unbounded", val, d)
    x = _extract(T, basis, colmap, P.num_vars)
    if not P.contains(x, FEAS_TOL):
        raise LPError("optimizer failed re-verification")
    val = float(c @ x)
    return LPOutcome("optimal", val, x, marginal=_marginal_band(abs(val)))


def cone_only_zero(P: Polyhedron) -> Tuple[bool, Optional[np.ndarray]]:
    """Is the homogeneous set P = {0}?

    Works on the compact slice where the signed coordinates plus the
    absolute values of the unsigned ones sum to at most 1, maximizing
    each coordinate (both ways for unsigned ones).  A maximum above
    FEAS_TOL yields a nonzero witness, returned with unit 1-norm.
    """
    Aeq, beq = P.eq
    Ain, bin_ = P.ineq
    if (beq.size and np.max(np.abs(beq)) > FEAS_TOL) or (
        bin_.size and np.max(np.abs(bin_)) > FEAS_TOL
    ):
        raise ValueError("cone_only_zero expects homogeneous right-hand sides")
    nv = P.num_vars
    unsigned = [i for i in range(nv) if not P.nonneg_mask[i]]
    nt = len(unsigned)
    ext = nv + nt
    Aeq2 = np.hstack([Aeq, np.zeros((Aeq.shape[0], nt))]) if Aeq.shape[0] else None
    rows = [np.hstack([Ain, np.zeros((Ain.shape[0], nt))])] if Ain.shape[0] else []
    rhs = [np.zeros(Ain.shape[0])] if Ain.shape[0] else []
    for k, i in enumerate(unsigned):
        up = np.zeros(ext)
        up[i] = 1.0
        up[nv + k] = -1.0
        dn = np.zeros(ext)
        dn[i] = -1.0
        dn[nv + k] = -1.0
        rows.append(np.vstack([up, dn]))
        rhs.append(np.zeros(2))
    slice_row = np.zeros(ext)
    for i in range(nv):
        if P.nonneg_mask[i]:
            slice_row[i] = 1.0
    slice_row[nv:] = 1.0
    rows.append(slice_row[None, :])
    rhs.append(np.ones(1))
    mask = list(P.nonneg_mask) + [True] * nt
    sliced = Polyhedron(
        num_vars=ext,
        eq=(Aeq2, beq) if Aeq2 is not None else None,
        ineq=(np.vstack(rows), np.concatenate(rhs)),
        nonneg_mask=mask,
    )
    objectives = []
    for i in range(nv):
        e = np.zeros(ext)
        e[i] = 1.0
        objectives.append(e)
        if not P.nonneg_mask[i]:
            objectives.append(-e)
    for obj in objectives:
        out = lp_optimize(obj, sliced, sense="max")
        if out.status != "optimal":
            raise LPError("slice LP must be bounded and feasible")
        if out.value > FEAS_TOL:
            w = out.witness[:nv]
            w = w / float(np.sum(np.abs(w)))
            if not P.contains(w, FEAS_TOL):
                raise LPError("cone witness failed re-verification")
            return False, w
    return True, None


def vertices(P: Polyhedron) -> List[np.ndarray]:
    """All basic feasible solutions of P, deduplicated and sorted.

    Enumerates active-set candidates of the right rank, so degenerate
    vertices are found (several times) and merged at DEDUP_TOL.  A
    polyhedron containing a line has no vertices and yields [].
    """
    nv = P.num_vars
    if nv > 12:
        raise LPError("vertex enumeration is guarded at 12 variables")
    if nv == 0:
        return []
    Aeq, beq = P.eq
    Ain, bin_ = P.ineq
    opt_rows = [Ain[i] for i in range(Ain.shape[0])]
    opt_rhs = [bin_[i] for i in range(Ain.shape[0])]
    for i in range(nv):
        if P.nonneg_mask[i]:
            e = np.zeros(nv)
            e[i] = 1.0
            opt_rows.append(e)
            opt_rhs.append(0.0)
    r0 = np.linalg.matrix_rank(Aeq) if Aeq.shape[0] else 0
    k = nv - r0
    if k < 0:
        k = 0
    found: List[np.ndarray] = []
    for combo in combinations(range(len(opt_rows)), k):
        Asys = np.vstack([Aeq] + [opt_rows[j] for j in combo]) if Aeq.shape[0] or combo else np.zeros((0, nv))
        bsys = np.concatenate([beq, [opt_rhs[j] for j in combo]])
        if Asys.shape[0] < nv:
            continue
        sol, _, rank, _ = np.linalg.lstsq(Asys, bsys, rcond=None)
        if rank < nv:
            continue
        # one step of iterative refinement keeps degenerate bases honest
        sol = sol + np.linalg.lstsq(Asys, bsys - Asys @ sol, rcond=None)[0]
        if np.max(np.abs(Asys @ sol - bsys)) > 1e-8:
            continue
        if not P.contains(sol, FEAS_TOL):
            continue
        if any(np.max(np.abs(sol - v)) <= DEDUP_TOL for v in found):
            continue
        found.append(sol)
    found.sort(key=lambda v: tuple(v))
    return found
