"""Solver for the strongly convex proximal subproblem.

For fixed (x, y) this minimizes nu(w) = f(x, w) + |w - y|^2 / (2 gamma)
subject to g(x, w) <= 0.  Under the gamma bound enforced by the data
model, nu is strongly convex in w, so the minimizer is unique and local
methods are global.

The solver runs an augmented-Lagrangian outer loop (penalty times 10
each round, multiplier estimates clipped at zero) with a damped Newton
inner minimization, then polishes the final iterate with a few Newton
steps on the active-set KKT system.  Reported multipliers come from a
least-squares refit on the active rows, falling back to an LP witness
of the multiplier polyhedron if the refit is poor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .expr import EvalPoint, eval_expr, gradient, hessian
from .lpcore import Polyhedron, lp_feasible
from .model import DEFAULT_ACTIVE_TOL, ActiveSet, BilevelProblem, active_set

__all__ = [
    "InnerSolution",
    "InnerInfeasibleError",
    "InnerSolverError",
    "solve_inner",
    "inner_multiplier_polyhedron",
    "abnormal_multiplier_cone",
]

_PENALTY_CAP = 1e14
_INFEAS_PENALTY = 1e12


class InnerInfeasibleError(RuntimeError):
    """The lower-level feasible set appears empty near the query point."""


class InnerSolverError(RuntimeError):
    """Iteration budget exhausted before reaching the KKT tolerance."""


@dataclass(frozen=True)
class InnerSolution:
    """Proximal point w = S_gamma(x, y) with envelope value and multipliers.

    kkt_residual is the max of the stationarity, feasibility, and
    complementarity residuals actually achieved.  multiplier_set_empty
    marks the degenerate case where the value converged but no
    Lagrange-multiplier vector exists at the computed point.
    """

    w: np.ndarray
    value: float
    multipliers: np.ndarray
    kkt_residual: float
    active: ActiveSet
    iterations: int
    multiplier_set_empty: bool = False


class _InnerWorkspace:
    """Cached callables for one (prob, x, y) instance."""

    def __init__(self, prob: BilevelProblem, x, y):
        self.prob = prob
        self.x = tuple(float(v) for v in x)
        self.y = np.asarray(y, dtype=float)
        if len(self.x) != prob.n or self.y.shape != (prob.m,):
            raise ValueError("x or y has the wrong dimension")
        self.gamma = prob.gamma
        self.n = prob.n
        self.m = prob.m

    def point(self, w):
        return EvalPoint(self.x, tuple(w))

    def nu(self, w) -> float:
        d = w - self.y
        return eval_expr(self.prob.f, self.point(w)) + float(d @ d) / (2 * self.gamma)

    def grad_nu(self, w):
        return gradient(self.prob.f, self.point(w))[self.n :] + (w - self.y) / self.gamma

    def hess_nu(self, w):
        H = hessian(self.prob.f, self.point(w))[self.n :, self.n :]
        return H + np.eye(self.m) / self.gamma

    def g_vals(self, w):
        pt = self.point(w)
        return np.array([eval_expr(gi, pt) for gi in self.prob.g])

    def g_grads(self, w):
        pt = self.point(w)
        return np.array([gradient(gi, pt)[self.n :] for gi in self.prob.g])

    def g_hess(self, w, i):
        return hessian(self.prob.g[i], self.point(w))[self.n :, self.n :]


def _al_value(ws, w, mu, rho):
    gv = ws.g_vals(w)
    t = np.maximum(0.0, mu + rho * gv)
    return ws.nu(w) + float(np.sum(t * t - mu * mu)) / (2 * rho)


def _al_grad(ws, w, mu, rho):
    gv = ws.g_vals(w)
    t = np.maximum(0.0, mu + rho * gv)
    return ws.grad_nu(w) + ws.g_grads(w).T @ t, gv, t


def _al_hess(ws, w, t, rho):
    H = ws.hess_nu(w)
    Jg = ws.g_grads(w)
    for i in range(len(t)):
        if t[i] > 0.0:
            H = H + rho * np.outer(Jg[i], Jg[i]) + t[i] * ws.g_hess(w, i)
    return H


def _newton_descend(ws, w, mu, rho, grad_tol, max_iter):
    """Damped Newton with Armijo line search on the AL function."""
    used = 0
    fw = _al_value(ws, w, mu, rho)
    for _ in range(max_iter):
        grad, _, t = _al_grad(ws, w, mu, rho)
        if float(np.max(np.abs(grad))) <= grad_tol:
            break
        H = _al_hess(ws, w, t, rho)
        try:
            d = -np.linalg.solve(H, grad)
            if float(grad @ d) >= 0.0:
                d = -grad
        except np.linalg.LinAlgError:
            d = -grad
        step = 1.0
        gd = float(grad @ d)
        accepted = False
        for _ in range(60):
            cand = w + step * d
            fc = _al_value(ws, cand, mu, rho)
            if fc <= fw + 1e-4 * step * gd:
                w, fw = cand, fc
                accepted = True
                break
            step *= 0.5
        used += 1
        if not accepted:
            break
        # Under a large penalty the gradient quantizes at roughly
        # rho * eps, so grad_tol may be unreachable; once the accepted
        # step is below float resolution nothing more can change.
        if float(np.max(np.abs(step * d))) <= 1e-15 * (1.0 + float(np.max(np.abs(w)))):
            break
    return w, used


def _kkt_residuals(ws, w, lam) -> Tuple[float, float, float]:
    gv = ws.g_vals(w)
    stat = float(np.max(np.abs(ws.grad_nu(w) + ws.g_grads(w).T @ lam)))
    feas = float(max(0.0, np.max(gv))) if gv.size else 0.0
    comp = float(np.max(np.abs(lam * gv))) if gv.size else 0.0
    return stat, feas, comp


def _kkt_polish(ws, w, lam, act, max_iter=20):
    """Newton on the active-set KKT equations; returns improved (w, lam)."""
    act = sorted(act)
    for _ in range(max_iter):
        gv = ws.g_vals(w)
        Jg = ws.g_grads(w)
        r1 = ws.grad_nu(w) + Jg.T @ lam
        r2 = gv[act]
        res = max(
            float(np.max(np.abs(r1))),
            float(np.max(np.abs(r2))) if len(act) else 0.0,
        )
        if res <= 1e-13:
            break
        k = len(act)
        H = ws.hess_nu(w)
        for i in range(len(lam)):
            if lam[i] != 0.0:
                H = H + lam[i] * ws.g_hess(w, i)
        KKT = np.zeros((ws.m + k, ws.m + k))
        KKT[: ws.m, : ws.m] = H
        if k:
            JA = Jg[act]
            KKT[: ws.m, ws.m :] = JA.T
            KKT[ws.m :, : ws.m] = JA
        rhs = -np.concatenate([r1, r2])
        try:
            delta = np.linalg.solve(KKT, rhs)
            if not np.all(np.isfinite(delta)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            # Duplicate active rows make the system singular but usually
            # consistent; the minimum-norm step still polishes those.
            delta, *_ = np.linalg.lstsq(KKT, rhs, rcond=None)
        scale = 1.0 + float(np.max(np.abs(w))) + float(np.max(np.abs(lam), initial=0.0))
        if not np.all(np.isfinite(delta)) or float(np.max(np.abs(delta))) > 1e3 * scale:
            break
        w = w + delta[: ws.m]
        lam = lam.copy()
        for j, i in enumerate(act):
            lam[i] += delta[ws.m + j]
    return w, lam


def _refit_multipliers(ws, w, act):
    """Least-squares multipliers on the active rows, clipped at zero."""
    lam = np.zeros(len(ws.prob.g))
    act = sorted(act)
    if not act:
        return lam
    Jg = ws.g_grads(w)
    target = -ws.grad_nu(w)
    sol, _, _, _ = np.linalg.lstsq(Jg[act].T, target, rcond=None)
    keep = [i for i, v in zip(act, sol) if v > -1e-9]
    if len(keep) != len(act):
        if not keep:
            return lam
        sol, _, _, _ = np.linalg.lstsq(Jg[keep].T, target, rcond=None)
        act = keep
    for i, v in zip(act, sol):
        lam[i] = max(0.0, float(v))
    return lam


def inner_multiplier_polyhedron(prob: BilevelProblem, x, y, w, tol: float = DEFAULT_ACTIVE_TOL) -> Polyhedron:
    """Multiplier set at w: stationarity rows plus zero rows off the active set.

    Raises the active-set infeasibility error when w violates g(x, .) at
    tol, since multipliers are meaningless there.
    """
    ws = _InnerWorkspace(prob, x, np.asarray(y, dtype=float))
    w = np.asarray(w, dtype=float)
    act = active_set(prob.g, ws.point(w), tol=tol)
    p = prob.p
    rows = [ws.g_grads(w).T]  # m x p
    rhs = [-ws.grad_nu(w)]
    inactive = [i for i in range(1, p + 1) if i not in act.indices]
    for i in inactive:
        e = np.zeros(p)
        e[i - 1] = 1.0
        rows.append(e[None, :])
        rhs.append(np.zeros(1))
    return Polyhedron(
        num_vars=p,
        eq=(np.vstack(rows), np.concatenate(rhs)),
        nonneg_mask=(True,) * p,
    )


def abnormal_multiplier_cone(prob: BilevelProblem, x, w, tol: float = DEFAULT_ACTIVE_TOL) -> Polyhedron:
    """Cone of nonnegative multipliers that annihilate the active gradients.

    This is the homogeneous companion of inner_multiplier_polyhedron: the
    objective gradient is dropped and only the constraint geometry at w
    remains.  The cone reduces to {0} exactly when the active gradients
    of g(x, .) are positively linearly independent, which is the
    Mangasarian-Fromovitz condition for the lower-level feasible set.
    """
    ws = _InnerWorkspace(prob, x, np.zeros(prob.m))
    w = np.asarray(w, dtype=float)
    act = active_set(prob.g, ws.point(w), tol=tol)
    p = prob.p
    rows = [ws.g_grads(w).T]
    rhs = [np.zeros(prob.m)]
    inactive = [i for i in range(1, p + 1) if i not in act.indices]
    for i in inactive:
        e = np.zeros(p)
        e[i - 1] = 1.0
        rows.append(e[None, :])
        rhs.append(np.zeros(1))
    return Polyhedron(
        num_vars=p,
        eq=(np.vstack(rows), np.concatenate(rhs)),
        nonneg_mask=(True,) * p,
    )


def solve_inner(
    prob: BilevelProblem,
    x,
    y,
    w0=None,
    tol: float = 1e-10,
    max_outer: int = 200,
    max_inner: int = 500,
) -> InnerSolution:
    """Compute S_gamma(x, y), the envelope value, and KKT multipliers.

    Terminates when stationarity, feasibility, and complementarity all
    sit at or below tol (default 1e-10, two orders inside the 1e-8
    certification tolerances).  Raises InnerInfeasibleError when the
    feasibility measure stalls under an extreme penalty, and
    InnerSolverError when the iteration budget runs out.
    """
    ws = _InnerWorkspace(prob, x, y)
    w = np.asarray(w0, dtype=float).copy() if w0 is not None else ws.y.copy()
    if w.shape != (prob.m,):
        raise ValueError("w0 has the wrong dimension")
    mu = np.zeros(prob.p)
    rho = 10.0
    total = 0
    lam = mu
    for _ in range(max_outer):
        grad_tol = max(tol / 10.0, 1e-12)
        w, used = _newton_descend(ws, w, mu, rho, grad_tol, max_inner)
        total += used
        gv = ws.g_vals(w)
        mu = np.maximum(0.0, mu + rho * gv)
        lam = mu
        stat, feas, comp = _kkt_residuals(ws, w, lam)
        if max(stat, feas, comp) <= tol:
            break
        if feas <= 1e-6:
            # near-feasible: a few Newton steps on the active-set KKT
            # system beat grinding the penalty up for complementarity.
            # The stationarity residual is deliberately not consulted
            # here: under a large penalty the multiplier estimate
            # quantizes and stat stalls around rho * eps even when w is
            # at the solution, while the polish recomputes its own.
            guess = {i for i in range(prob.p) if gv[i] >= -1e-6 or lam[i] > 1e-8}
            w2, lam2 = _kkt_polish(ws, w.copy(), lam.copy(), guess)
            lam2 = np.maximum(lam2, 0.0)
            if max(_kkt_residuals(ws, w2, lam2)) <= tol:
                w, lam = w2, lam2
                break
        if rho >= _INFEAS_PENALTY and feas > 1e-8:
            raise InnerInfeasibleError(
                f"feasibility measure {feas:.3e} stalled at penalty {rho:.1e}"
            )
        rho = min(rho * 10.0, _PENALTY_CAP)
    # final polish pass; accepted only if it does not lose ground
    guess = {i for i in range(prob.p) if gv[i] >= -1e-6 or lam[i] > 1e-8}
    if guess:
        w2, lam2 = _kkt_polish(ws, w.copy(), lam.copy(), guess)
        s2 = _kkt_residuals(ws, w2, np.maximum(lam2, 0.0))
        if max(s2) <= max(_kkt_residuals(ws, w, lam)):
            w, lam = w2, np.maximum(lam2, 0.0)
    act = active_set(prob.g, ws.point(w), tol=DEFAULT_ACTIVE_TOL)
    refit = _refit_multipliers(ws, w, [i - 1 for i in act.indices])
    if max(_kkt_residuals(ws, w, refit)) <= max(_kkt_residuals(ws, w, lam)):
        lam = refit
    stat, feas, comp = _kkt_residuals(ws, w, lam)
    residual = max(stat, feas, comp)
    empty = False
    if residual > tol:
        # multipliers may simply not exist at this point; ask the LP
        outcome = lp_feasible(inner_multiplier_polyhedron(prob, x, y, w))
        if outcome.status == "optimal":
            lam = outcome.witness
            stat, feas, comp = _kkt_residuals(ws, w, lam)
            residual = max(stat, feas, comp)
        else:
            empty = True
    if residual > 100 * tol and not empty:
        raise InnerSolverError(
            f"KKT residual {residual:.3e} above tolerance after iteration budget"
        )
    return InnerSolution(
        w=w,
        value=ws.nu(w),
        multipliers=lam,
        kkt_residual=residual,
        active=act,
        iterations=total,
        multiplier_set_empty=empty,
    )
