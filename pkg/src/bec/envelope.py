"""Directional analysis of the regularized lower-level value function.

The smoothed value

    v(x, y) = min over w of  f(x, w) + |w - y|^2 / (2 gamma)
              subject to     g(x, w) <= 0

always has an exact gradient in y, namely (y - w)/gamma at the proximal
minimizer w.  Its behavior in x is governed by the multiplier polyhedron
at w: depending on which structural hypotheses hold, a linear functional
maximized (or sandwiched) over that polyhedron gives the one-sided
directional derivative exactly, or brackets it from both sides.

This module evaluates those formulas, produces independent
finite-difference estimates to check them against, assembles outer
estimates of the subdifferential of v as finite point sets, and runs a
sampling falsifier for the weak-convexity bound that the exact formulas
lean on.  Nothing here selects a regime automatically: the caller names
the hypothesis set, and anything that cannot be machine-checked must be
asserted explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .expr import EvalPoint, gradient, hessian
from .inner import (
    InnerInfeasibleError,
    abnormal_multiplier_cone,
    inner_multiplier_polyhedron,
    solve_inner,
)
from .lpcore import DEDUP_TOL, Polyhedron, cone_only_zero, lp_feasible, lp_optimize, vertices
from .model import BilevelProblem

__all__ = [
    "ORTHOGONALITY_TOL",
    "EnvelopeError",
    "RegimeError",
    "EmptyMultiplierSetError",
    "Direction",
    "DerivativeEstimate",
    "SubdiffEstimate",
    "WeakConvexityReport",
    "grad_y_envelope",
    "dir_derivative",
    "fd_dir_derivative",
    "subdiff_estimate",
    "weak_convexity_check",
]

# Tolerance for the row that pins multipliers orthogonal to the moving
# constraint gradients.  Matches the LP feasibility tolerance.
ORTHOGONALITY_TOL = 1e-9

_DERIVATIVE_KINDS = ("exact-formula", "bounds", "finite-difference")
_REGIMES = ("weakly-convex", "dini", "rcr", "oracle")
_SUBDIFF_SOURCES = ("directional", "union", "single-direction")

_DEFAULT_FD_STEPS = (1e-2, 1e-3, 1e-4, 1e-5)


class EnvelopeError(RuntimeError):
    """Envelope-level failure: unbounded support value, no usable direction."""


class RegimeError(EnvelopeError):
    """A regime's hypotheses are neither declared, checked, nor asserted."""


class EmptyMultiplierSetError(EnvelopeError):
    """The multiplier polyhedron at the proximal point is empty."""


@dataclass(frozen=True)
class Direction:
    """A joint direction (u, v) in upper-variable and y space."""

    u: Tuple[float, ...]
    v: Tuple[float, ...]

    def __post_init__(self):
        u = tuple(float(a) for a in self.u)
        v = tuple(float(a) for a in self.v)
        if not all(math.isfinite(a) for a in u + v):
            raise ValueError("direction has non-finite entries")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def is_zero(self) -> bool:
        return all(a == 0.0 for a in self.u + self.v)

    def joint(self) -> np.ndarray:
        return np.array(self.u + self.v, dtype=float)


@dataclass(frozen=True)
class DerivativeEstimate:
    """One directional-derivative evaluation.

    kind "exact-formula" carries a single value (lower == upper),
    "bounds" a sandwich, "finite-difference" the spread of the last few
    difference quotients.  estimate is the point value to quote: the
    exact value, the midpoint of the sandwich, or the extrapolated
    quotient.  witnesses holds the multiplier vectors attaining the
    reported bounds, when the computation produced any.  notes records
    every judgment call made along the way.
    """

    kind: str
    lower: float
    upper: float
    estimate: float
    regime: str
    witnesses: tuple = ()
    notes: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in _DERIVATIVE_KINDS:
            raise ValueError(f"unknown estimate kind {self.kind!r}")
        if self.regime not in _REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        if math.isfinite(self.lower) and math.isfinite(self.upper):
            if self.lower > self.upper + 1e-12:
                raise ValueError("lower bound exceeds upper bound")
        if self.kind == "exact-formula" and self.lower != self.upper:
            raise ValueError("exact estimates must carry a single value")


@dataclass(frozen=True)
class SubdiffEstimate:
    """A finite outer description of the subdifferential of v at (x, y).

    points are (n+m)-vectors (x-part, y-part).  multiplier_source says
    which multiplier family generated them: "directional" for the set
    pinned to one direction, "union" for the sweep over critical
    directions, "single-direction" for the single-direction form that
    needs the restricted-range hypotheses.  is_convex_hull marks
    whether the estimate is the hull of the points or just their union;
    exact marks whether the generating formula is an equality under its
    hypotheses rather than a one-sided inclusion.
    """

    points: tuple
    multiplier_source: str
    is_convex_hull: bool
    exact: bool
    notes: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.multiplier_source not in _SUBDIFF_SOURCES:
            raise ValueError(f"unknown multiplier source {self.multiplier_source!r}")


@dataclass(frozen=True)
class WeakConvexityReport:
    """Outcome of the midpoint-convexity falsifier on a box.

    rho_v is the modulus actually used in the test; modulus_estimate is
    the sampled curvature bound of f (largest negative eigenvalue of its
    full Hessian over the box, sign-flipped).  worst_gap is the most
    positive value of v(mid) - bound seen; a pair is a violation when
    that gap exceeds 1e-9, which leaves room for the inner solver's own
    residual.  examples holds up to five violating pairs.
    """

    rho_v: float
    modulus_estimate: float
    pairs_tested: int
    violations: int
    worst_gap: float
    examples: tuple = ()
    notes: Tuple[str, ...] = ()


def _check_direction(prob: BilevelProblem, d: Direction) -> Tuple[np.ndarray, np.ndarray]:
    if not isinstance(d, Direction):
        raise TypeError("expected a Direction")
    if len(d.u) != prob.n or len(d.v) != prob.m:
        raise ValueError(
            f"direction dimensions ({len(d.u)}, {len(d.v)}) do not match problem ({prob.n}, {prob.m})"
        )
    return np.array(d.u, dtype=float), np.array(d.v, dtype=float)


def _first_order(prob: BilevelProblem, x: np.ndarray, w: np.ndarray):
    """Split gradients of f and of every g_i at (x, w) into x and w blocks."""
    pt = EvalPoint.of(x, w)
    gf = gradient(prob.f, pt)
    n = prob.n
    if prob.p:
        gg = np.array([gradient(gi, pt) for gi in prob.g])
    else:
        gg = np.zeros((0, n + prob.m))
    return gf[:n], gf[n:], gg[:, :n], gg[:, n:]


def _with_row(poly: Polyhedron, row: np.ndarray, rhs: float, equality: bool) -> Polyhedron:
    A, b = poly.eq
    C, c = poly.ineq
    if equality:
        A = np.vstack([A, row[None, :]])
        b = np.concatenate([b, [rhs]])
    else:
        C = np.vstack([C, row[None, :]])
        c = np.concatenate([c, [rhs]])
    return Polyhedron(num_vars=poly.num_vars, eq=(A, b), ineq=(C, c), nonneg_mask=poly.nonneg_mask)


def _orthogonality_row(prob: BilevelProblem, active, ggx, ggw, u, d) -> np.ndarray:
    """Coefficients of the row  sum_i lam_i * (grad g_i . (u, d)) = 0.

    Only active indices get a nonzero coefficient; inactive multipliers
    are already pinned to zero by the polyhedron itself.
    """
    row = np.zeros(prob.p)
    for i in active:
        row[i - 1] = float(ggx[i - 1] @ u + ggw[i - 1] @ d)
    return row


def _directional_polyhedron(prob, poly, active, ggx, ggw, u, d) -> Polyhedron:
    row = _orthogonality_row(prob, active, ggx, ggw, u, d)
    return _with_row(poly, row, 0.0, equality=True)


def _support_interval(coeffs: np.ndarray, poly: Polyhedron):
    """Min and max of coeffs . lam over poly, with attaining witnesses."""
    lo = lp_optimize(coeffs, poly, sense="min")
    hi = lp_optimize(coeffs, poly, sense="max")
    return lo, hi


def grad_y_envelope(prob: BilevelProblem, x, y, inner_tol: float = 1e-10) -> np.ndarray:
    """Gradient of v(x, .) at y: (y - w)/gamma at the proximal minimizer w.

    This holds at every point where the inner problem is solvable, with
    no hypotheses beyond the modulus bound already enforced by the
    problem container.
    """
    sol = solve_inner(prob, x, y, tol=inner_tol)
    return (np.asarray(y, dtype=float) - sol.w) / prob.gamma


def dir_derivative(
    prob: BilevelProblem,
    x,
    y,
    d: Direction,
    regime: str,
    assume_hypotheses: bool = False,
    inner_tol: float = 1e-10,
) -> DerivativeEstimate:
    """One-sided directional derivative of v at (x, y) along (u, v).

    The y-part contributes v . (y - w)/gamma exactly in every regime.
    The x-part is a linear functional of the multiplier, evaluated over
    the multiplier polyhedron at w:

      "weakly-convex"  maximize; exact value.  Requires the declared
                       joint flags (weakly convex f, quasiconvex g).
      "dini"           minimize and maximize; the pair brackets both
                       one-sided derivatives.  Requires the positive
                       linear independence of active gradients at w,
                       checked here via the abnormal-multiplier cone.
      "rcr"            maximize; exact value, but under restricted-range
                       and recession hypotheses this toolkit cannot
                       verify.  Only runs with assume_hypotheses=True.

    assume_hypotheses skips the named precheck; use it after running the
    qualification checks separately, not instead of them.
    """
    u, v = _check_direction(prob, d)
    if regime not in ("weakly-convex", "dini", "rcr"):
        raise RegimeError(f"no analytic formula for regime {regime!r}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sol = solve_inner(prob, x, y, tol=inner_tol)
    w = sol.w
    act = sol.active.indices
    gfx, gfw, ggx, ggw = _first_order(prob, x, w)
    v_term = float(v @ (y - w)) / prob.gamma
    c_const = float(gfx @ u)
    coeffs = ggx @ u if prob.p else np.zeros(0)

    poly = inner_multiplier_polyhedron(prob, x, y, w)
    if lp_feasible(poly).status == "infeasible":
        raise EmptyMultiplierSetError(
            "multiplier polyhedron at the proximal point is empty; no formula applies"
        )

    notes = []
    if regime == "weakly-convex":
        if not assume_hypotheses:
            flags = prob.convexity_flags
            if flags.f != "jointly-weakly-convex" or flags.g != "jointly-quasiconvex":
                raise RegimeError(
                    "exact formula needs jointly-weakly-convex f and jointly-quasiconvex g; "
                    "declare those flags or pass assume_hypotheses=True"
                )
    elif regime == "rcr":
        if not assume_hypotheses:
            raise RegimeError(
                "restricted-range and recession hypotheses cannot be machine-checked; "
                "pass assume_hypotheses=True to assert them"
            )
    else:  # dini
        if not assume_hypotheses:
            only_zero, ray = cone_only_zero(abnormal_multiplier_cone(prob, x, w))
            if not only_zero:
                raise RegimeError(
                    "active constraint gradients at the proximal point admit a nonzero "
                    "nonnegative annihilator (positive linear independence fails); "
                    "run the directional qualification checks or pass assume_hypotheses=True"
                )

    if regime == "dini":
        lo, hi = _support_interval(coeffs, poly)
        lower = -math.inf if lo.status == "unbounded" else c_const + lo.value + v_term
        upper = math.inf if hi.status == "unbounded" else c_const + hi.value + v_term
        if lo.status == "unbounded" or hi.status == "unbounded":
            notes.append(
                "multiplier polyhedron is unbounded along the objective; "
                "the corresponding bound is infinite"
            )
        witnesses = tuple(
            o.witness for o in (lo, hi) if o.status == "optimal" and o.witness is not None
        )
        if math.isfinite(lower) and math.isfinite(upper) and upper - lower <= 1e-12:
            value = 0.5 * (lower + upper)
            notes.append(
                "the derivative functional is constant on the multiplier set, "
                "so both one-sided derivatives coincide and the value is exact"
            )
            return DerivativeEstimate(
                kind="exact-formula",
                lower=value,
                upper=value,
                estimate=value,
                regime=regime,
                witnesses=witnesses,
                notes=tuple(notes),
            )
        return DerivativeEstimate(
            kind="bounds",
            lower=lower,
            upper=upper,
            estimate=0.5 * (lower + upper) if math.isfinite(lower) and math.isfinite(upper) else math.nan,
            regime=regime,
            witnesses=witnesses,
            notes=tuple(notes),
        )

    # Exact regimes: maximize the functional over the full polyhedron.
    out = lp_optimize(coeffs, poly, sense="max")
    if out.status == "unbounded":
        raise EnvelopeError(
            "support value is unbounded over the multiplier set; the compactness "
            "part of the regime hypotheses fails at this point"
        )
    value = c_const + out.value + v_term
    witness = out.witness

    # The sharp statement maximizes over the multipliers orthogonal to the
    # moving constraint gradients.  Under the regime hypotheses the full
    # maximum is the support function of the same subdifferential, so the
    # two agree whenever the orthogonal subset is nonempty; we check, and
    # say so when the literal subset is empty or the maximizer is not
    # orthogonal.
    if prob.p:
        dpoly = _directional_polyhedron(prob, poly, act, ggx, ggw, u, v)
        dfeas = lp_feasible(dpoly)
        if dfeas.status == "infeasible":
            notes.append(
                "no multiplier is orthogonal to the moving constraint gradients in this "
                "direction; the value reported is the support function of the full "
                "multiplier image"
            )
        else:
            row = _orthogonality_row(prob, act, ggx, ggw, u, v)
            if witness is not None and abs(float(row @ witness)) > ORTHOGONALITY_TOL:
                dout = lp_optimize(coeffs, dpoly, sense="max")
                if dout.status == "optimal" and abs(dout.value - out.value) <= 1e-9 * max(
                    1.0, abs(out.value)
                ):
                    witness = dout.witness
                else:
                    gap = out.value - (dout.value if dout.status == "optimal" else -math.inf)
                    notes.append(
                        "maximum over the orthogonal multiplier subset falls short of the "
                        f"full maximum by {gap:.3e}; reporting the support-function value"
                    )
    return DerivativeEstimate(
        kind="exact-formula",
        lower=value,
        upper=value,
        estimate=value,
        regime=regime,
        witnesses=(witness,) if witness is not None else (),
        notes=tuple(notes),
    )


def fd_dir_derivative(
    prob: BilevelProblem,
    x,
    y,
    d: Direction,
    steps=_DEFAULT_FD_STEPS,
    inner_tol: float = 1e-12,
) -> DerivativeEstimate:
    """One-sided difference quotients of v along (u, v), as an oracle.

    Evaluates (v(z + t d) - v(z))/t for each step, reports the spread of
    the last three quotients as [lower, upper], and extrapolates the
    last two (assuming the leading error is linear in t) for the point
    estimate.  The inner solves run at a tolerance well below the
    smallest step so solver noise stays out of the quotients.  A zero
    direction short-circuits to an exact zero.
    """
    u, v = _check_direction(prob, d)
    steps = tuple(float(t) for t in steps)
    if len(steps) < 2 or any(t <= 0 for t in steps):
        raise ValueError("steps must be at least two positive values")
    if any(b <= s for b, s in zip(steps, steps[1:])):
        raise ValueError("steps must be strictly decreasing")
    if d.is_zero:
        return DerivativeEstimate(
            kind="finite-difference",
            lower=0.0,
            upper=0.0,
            estimate=0.0,
            regime="oracle",
            notes=("zero direction",),
        )
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    base = solve_inner(prob, x, y, tol=inner_tol)
    quotients = []
    for t in steps:
        probe = solve_inner(prob, x + t * u, y + t * v, w0=base.w, tol=inner_tol)
        quotients.append((probe.value - base.value) / t)
    tail = quotients[-3:] if len(quotients) >= 3 else quotients
    ratio = steps[-2] / steps[-1]
    estimate = (ratio * quotients[-1] - quotients[-2]) / (ratio - 1.0)
    return DerivativeEstimate(
        kind="finite-difference",
        lower=min(tail),
        upper=max(tail),
        estimate=estimate,
        regime="oracle",
        notes=(f"steps {steps}", "estimate extrapolated from the last two quotients"),
    )


def _dedup(points, tol=DEDUP_TOL):
    kept = []
    for pt in points:
        if not any(np.max(np.abs(pt - q)) <= tol for q in kept):
            kept.append(pt)
    return kept


def _image_points(lams, gfx, ggx, grad_y):
    return [np.concatenate([gfx + (ggx.T @ lam if ggx.size else 0.0 * gfx), grad_y]) for lam in lams]


def _critical_directions(
    prob, active, gfx, gfw, ggx, ggw, slope, u, lower, upper, box_radius, equality
):
    """Vertex sample of the critical-direction set in y-movement space.

    The set couples the linearized active constraints with a sandwich
    (or, under the restricted-range form, an equality) on the first-order
    change of the inner objective.  It need not be bounded, so it is
    intersected with a box before vertex enumeration; the callers note
    that truncation.
    """
    m = prob.m
    c0 = float(gfx @ u)
    a = gfw + slope
    ineq_rows = []
    ineq_rhs = []
    eq_rows = []
    eq_rhs = []
    for i in active:
        ineq_rows.append(ggw[i - 1])
        ineq_rhs.append(-float(ggx[i - 1] @ u))
    if equality:
        eq_rows.append(a)
        eq_rhs.append(upper - c0)
    else:
        ineq_rows.append(a)
        ineq_rhs.append(upper - c0)
        ineq_rows.append(-a)
        ineq_rhs.append(c0 - lower)
    for j in range(m):
        e = np.zeros(m)
        e[j] = 1.0
        ineq_rows.append(e)
        ineq_rhs.append(box_radius)
        ineq_rows.append(-e)
        ineq_rhs.append(box_radius)
    poly = Polyhedron(
        num_vars=m,
        eq=(np.vstack(eq_rows), np.array(eq_rhs)) if eq_rows else None,
        ineq=(np.vstack(ineq_rows), np.array(ineq_rhs)),
    )
    return vertices(poly)


def subdiff_estimate(
    prob: BilevelProblem,
    x,
    y,
    d: Direction,
    regime: str,
    inner_tol: float = 1e-10,
    max_directions: int = 32,
) -> SubdiffEstimate:
    """Finite point-set estimate of the subdifferential of v at (x, y).

    Every point has the form (grad_x f + grad_x g^T lam, (y - w)/gamma)
    for a multiplier lam at the proximal point w; the modes differ in
    which multipliers are allowed.

      "directional"  multipliers orthogonal to the constraint gradients
                     moving along (u, v).  Exact (an equality) under the
                     joint convexity flags plus a tangent-cone regularity
                     this toolkit does not verify; the points are the
                     vertices of a polytope and the estimate is its hull.
      "union"        sweep of the directional sets over a vertex sample
                     of the critical directions for u, plus a normalized
                     sample of the recession directions.  One-sided
                     (an outer estimate), not a hull.
      "rcr"          single-direction form: among the sampled critical
                     directions satisfying the exact first-order equality,
                     the one whose directional multiplier image is
                     smallest.  One-sided under hypotheses asserted by
                     the caller.

    Direction enumeration intersects an unbounded set with a box and is
    capped at max_directions; both steps are recorded in notes.
    """
    u, v = _check_direction(prob, d)
    if regime not in ("directional", "union", "rcr"):
        raise RegimeError(f"no subdifferential mode for regime {regime!r}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sol = solve_inner(prob, x, y, tol=inner_tol)
    w = sol.w
    act = sol.active.indices
    gfx, gfw, ggx, ggw = _first_order(prob, x, w)
    grad_y = (y - w) / prob.gamma
    poly = inner_multiplier_polyhedron(prob, x, y, w)
    if lp_feasible(poly).status == "infeasible":
        raise EmptyMultiplierSetError(
            "multiplier polyhedron at the proximal point is empty; no estimate applies"
        )
    notes = []

    if regime == "directional":
        dpoly = _directional_polyhedron(prob, poly, act, ggx, ggw, u, v)
        if lp_feasible(dpoly).status == "infeasible":
            return SubdiffEstimate(
                points=(),
                multiplier_source="directional",
                is_convex_hull=True,
                exact=True,
                notes=(
                    "no multiplier is orthogonal to the moving constraint gradients; "
                    "the directional subdifferential along this direction is empty",
                ),
            )
        verts = vertices(dpoly)
        if not verts:
            notes.append(
                "directional multiplier set contains a line; vertex enumeration "
                "returned nothing and the estimate is incomplete"
            )
        pts = _dedup(_image_points([np.asarray(t) for t in verts], gfx, ggx, grad_y))
        return SubdiffEstimate(
            points=tuple(pts),
            multiplier_source="directional",
            is_convex_hull=True,
            exact=True,
            notes=tuple(notes),
        )

    # Both remaining modes sweep critical directions in y-movement space.
    coeffs = ggx @ u if prob.p else np.zeros(0)
    c_const = float(gfx @ u)
    lo, hi = _support_interval(coeffs, poly)
    if lo.status != "optimal" or hi.status != "optimal":
        raise EnvelopeError(
            "support bounds over the multiplier set are unbounded; cannot "
            "delimit the critical directions"
        )
    lower = c_const + lo.value
    upper = c_const + hi.value
    slope = (w - y) / prob.gamma
    box_radius = 10.0 * max(1.0, float(np.max(np.abs(u))) if u.size else 1.0)
    notes.append(f"critical directions intersected with a box of radius {box_radius:g}")

    if regime == "union":
        dirs = [
            np.asarray(t)
            for t in _critical_directions(
                prob, act, gfx, gfw, ggx, ggw, slope, u,
                lower, upper, box_radius, equality=False,
            )
        ]
        # Recession part: critical directions for a zero upper movement,
        # normalized onto the unit sphere.  The sphere section itself is
        # not polyhedral; normalized box vertices stand in for it.
        zero_u = np.zeros(prob.n)
        sphere_raw = _critical_directions(
            prob, act, gfx, gfw, ggx, ggw, slope, zero_u,
            0.0, 0.0, box_radius, equality=False,
        )
        for t in sphere_raw:
            t = np.asarray(t)
            norm = float(np.linalg.norm(t))
            if norm > 1e-9:
                dirs.append(t / norm)
        notes.append("recession directions sampled as normalized box-section vertices")
        dirs = _dedup(dirs)
        if len(dirs) > max_directions:
            dirs = dirs[:max_directions]
            notes.append(f"direction sample truncated to {max_directions}")
        pts = []
        for dd in dirs:
            dp = _directional_polyhedron(prob, poly, act, ggx, ggw, u, dd)
            if lp_feasible(dp).status == "infeasible":
                continue
            pts.extend(np.asarray(t) for t in vertices(dp))
        image = _dedup(_image_points(pts, gfx, ggx, grad_y))
        return SubdiffEstimate(
            points=tuple(image),
            multiplier_source="union",
            is_convex_hull=False,
            exact=False,
            notes=tuple(notes),
        )

    # regime == "rcr": pick the most informative single direction among
    # those attaining the first-order equality.
    cand = _critical_directions(
        prob, act, gfx, gfw, ggx, ggw, slope, u,
        lower, upper, box_radius, equality=True,
    )
    if len(cand) > max_directions:
        cand = cand[:max_directions]
        notes.append(f"direction sample truncated to {max_directions}")
    best = None
    best_dir = None
    for t in cand:
        dd = np.asarray(t)
        dp = _directional_polyhedron(prob, poly, act, ggx, ggw, u, dd)
        if lp_feasible(dp).status == "infeasible":
            continue
        image = _dedup(_image_points([np.asarray(s) for s in vertices(dp)], gfx, ggx, grad_y))
        if not image:
            continue
        if best is None or len(image) < len(best):
            best = image
            best_dir = dd
    if best is None:
        raise EnvelopeError(
            "no critical direction with a nonempty orthogonal multiplier set was "
            "found; the single-direction estimate is unavailable here"
        )
    notes.append(
        "direction used: (" + ", ".join(f"{c:.6g}" for c in np.atleast_1d(best_dir)) + ")"
    )
    return SubdiffEstimate(
        points=tuple(best),
        multiplier_source="single-direction",
        is_convex_hull=False,
        exact=False,
        notes=tuple(notes),
    )


def weak_convexity_check(
    prob: BilevelProblem,
    lower,
    upper,
    num_pairs: int = 500,
    rho_v: Optional[float] = None,
    seed: int = 0,
    inner_tol: float = 1e-10,
) -> WeakConvexityReport:
    """Midpoint-convexity falsifier for v + (rho_v/2)|.|^2 on a box.

    Samples pairs (z1, z2) uniformly from the box [lower, upper] in
    (x, y) space and tests

        v(mid) <= v(z1)/2 + v(z2)/2 + (rho_v/8) |z1 - z2|^2 + 1e-9.

    When rho_v is not supplied it is derived from a sampled curvature
    bound: rho_hat is the largest negative eigenvalue of the full
    Hessian of f over the box, sign-flipped, and

        rho_v = rho_hat / (1 - gamma * rho_hat) + 1e-9.

    The full Hessian matters here: the modulus in y alone understates
    the curvature the envelope inherits when f couples x and y, and the
    derived bound must cover the joint behavior.  Passing rho_v=0 turns
    the run into a plain convexity test, which is the intended way to
    confirm the falsifier has teeth on problems that are not convex.
    """
    flags = prob.convexity_flags
    if flags.f != "jointly-weakly-convex" or flags.g != "jointly-quasiconvex":
        raise RegimeError(
            "the midpoint bound is only claimed under jointly-weakly-convex f "
            "and jointly-quasiconvex g; declare those flags first"
        )
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    dim = prob.n + prob.m
    if lower.shape != (dim,) or upper.shape != (dim,):
        raise ValueError(f"box bounds must have length {dim}")
    if np.any(lower > upper):
        raise ValueError("box is empty")
    rng = np.random.default_rng(seed)

    samples = rng.uniform(lower, upper, size=(200, dim))
    rho_hat = 0.0
    for z in samples:
        H = hessian(prob.f, EvalPoint.of(z[: prob.n], z[prob.n :]))
        rho_hat = max(rho_hat, -float(np.linalg.eigvalsh(H)[0]))
    rho_hat = max(rho_hat, 0.0)

    notes = []
    if rho_v is None:
        if prob.gamma * rho_hat >= 1.0:
            raise EnvelopeError(
                f"sampled curvature bound {rho_hat:g} is incompatible with "
                f"gamma={prob.gamma:g}; the envelope modulus formula diverges"
            )
        rho_v_val = rho_hat / (1.0 - prob.gamma * rho_hat) + 1e-9
        notes.append(f"modulus derived from sampled curvature bound {rho_hat:g}")
    else:
        rho_v_val = float(rho_v)
        notes.append(f"modulus overridden by caller to {rho_v_val:g}")

    def value(z):
        return solve_inner(prob, z[: prob.n], z[prob.n :], tol=inner_tol).value

    violations = 0
    worst = -math.inf
    examples = []
    tested = 0
    skipped = 0
    for _ in range(num_pairs):
        z1 = rng.uniform(lower, upper)
        z2 = rng.uniform(lower, upper)
        mid = 0.5 * (z1 + z2)
        try:
            v1, v2, vm = value(z1), value(z2), value(mid)
        except InnerInfeasibleError:
            skipped += 1
            continue
        tested += 1
        bound = 0.5 * v1 + 0.5 * v2 + (rho_v_val / 8.0) * float(np.sum((z1 - z2) ** 2))
        gap = vm - bound
        worst = max(worst, gap)
        if gap > 1e-9:
            violations += 1
            if len(examples) < 5:
                examples.append((tuple(z1), tuple(z2), gap))
    if skipped:
        notes.append(f"{skipped} pairs skipped: a probe point had an empty lower level")
    return WeakConvexityReport(
        rho_v=rho_v_val,
        modulus_estimate=rho_hat,
        pairs_tested=tested,
        violations=violations,
        worst_gap=worst,
        examples=tuple(examples),
        notes=tuple(notes),
    )
