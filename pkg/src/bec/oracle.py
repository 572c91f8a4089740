"""Brute-force grid oracles used to cross-check analytic values.

These scan a box in the lower variables, mask out infeasible points,
and take minima directly.  They are deliberately independent of the
inner solver: no shared code path beyond expression evaluation, so an
agreement between the two is evidence, not tautology.  Only one- and
two-dimensional lower levels are supported; that covers every bundled
problem and keeps the scan exact and dumb.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .expr import eval_many
from .model import BilevelProblem

__all__ = ["GridScan", "scan_lower_value", "scan_envelope_value"]

_FEAS_TOL = 1e-7


@dataclass(frozen=True)
class GridScan:
    value: float
    minimizers: Tuple[np.ndarray, ...]
    resolution: float
    points_scanned: int


def _grid_axis(lo: float, hi: float, res: float) -> np.ndarray:
    count = int(np.floor((hi - lo) / res + 1.5))
    return lo + np.arange(count) * res


def _feasible_values(prob: BilevelProblem, x, W: np.ndarray):
    X = np.tile(np.asarray(x, dtype=float), (W.shape[0], 1))
    mask = np.ones(W.shape[0], dtype=bool)
    for gi in prob.g:
        mask &= eval_many(gi, X, W) <= _FEAS_TOL
    return X, mask


def scan_lower_value(
    prob: BilevelProblem,
    x,
    lo,
    hi,
    resolution: float,
    value_tol: float = 1e-6,
) -> GridScan:
    """Brute-force lower-level value v(x) = min f over the feasible grid.

    minimizers holds one representative per cluster of near-optimal grid
    points (within value_tol of the minimum), so multi-branch solution
    sets show up as several entries.  Clustering applies to m = 1; for
    m = 2 only the best point is reported.
    """
    if prob.m > 2:
        raise ValueError("grid oracle supports m <= 2")
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (prob.m,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (prob.m,))
    axes = [_grid_axis(lo[j], hi[j], resolution) for j in range(prob.m)]
    if prob.m == 1:
        W = axes[0][:, None]
    else:
        A, B = np.meshgrid(axes[0], axes[1], indexing="ij")
        W = np.column_stack([A.ravel(), B.ravel()])
    X, mask = _feasible_values(prob, x, W)
    if not np.any(mask):
        raise ValueError("no feasible grid points in the scan box")
    fvals = eval_many(prob.f, X, W)
    fvals = np.where(mask, fvals, np.inf)
    best = float(np.min(fvals))
    if prob.m == 2:
        reps = (W[int(np.argmin(fvals))].copy(),)
        return GridScan(best, reps, resolution, W.shape[0])
    near = np.nonzero(fvals <= best + value_tol)[0]
    reps = []
    start = 0
    for k in range(1, len(near) + 1):
        if k == len(near) or near[k] != near[k - 1] + 1:
            cluster = near[start:k]
            local = cluster[int(np.argmin(fvals[cluster]))]
            reps.append(W[local].copy())
            start = k
    return GridScan(best, tuple(reps), resolution, W.shape[0])


def scan_envelope_value(
    prob: BilevelProblem,
    x,
    y,
    lo,
    hi,
    resolution: float,
    refine: int = 2,
) -> float:
    """Brute-force envelope value with zoom refinement around the best cell.

    Each refinement shrinks the window to the neighboring cells of the
    incumbent and divides the step by 10; safe because the objective is
    strongly convex on the scanned region under the gamma bound.
    """
    if prob.m > 2:
        raise ValueError("grid oracle supports m <= 2")
    y = np.asarray(y, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (prob.m,)).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (prob.m,)).copy()
    res = resolution
    best_val = np.inf
    for _ in range(refine + 1):
        axes = [_grid_axis(lo[j], hi[j], res) for j in range(prob.m)]
        if prob.m == 1:
            W = axes[0][:, None]
        else:
            A, B = np.meshgrid(axes[0], axes[1], indexing="ij")
            W = np.column_stack([A.ravel(), B.ravel()])
        X, mask = _feasible_values(prob, x, W)
        if not np.any(mask):
            raise ValueError("no feasible grid points in the scan box")
        fvals = eval_many(prob.f, X, W)
        quad = np.sum((W - y) ** 2, axis=1) / (2.0 * prob.gamma)
        total = np.where(mask, fvals + quad, np.inf)
        idx = int(np.argmin(total))
        best_val = min(best_val, float(total[idx]))
        center = W[idx]
        lo = np.maximum(lo, center - 2 * res)
        hi = np.minimum(hi, center + 2 * res)
        res /= 10.0
    return best_val
