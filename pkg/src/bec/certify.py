"""Constraint qualifications and stationarity certificates.

The single-level reformulation replaces the inner optimality condition
with the inequality f(x, y) - v(x, y) <= 0, which holds with equality
exactly at feasible points.  Certifying stationarity there means
exhibiting multipliers for a system that couples the upper-level
gradients with the inner multiplier polyhedron; the only nonlinearity,
a product between the envelope multiplier and the inner multiplier, is
removed by substitution so every search below is a plain LP.

The checks come in three strengths.  Exact cone tests (multiplier sets,
the critical cone, positive linear independence of active gradients)
reduce to LP feasibility and are decided outright.  Certificate
searches return re-verified multiplier vectors or report none, which is
a finding rather than an error.  Sequential conditions such as
directional quasi-normality are existential over all approaching
sequences, so the machine can only sample: the honest verdict in that
case is "certificate-modulo-sampling", never "holds".
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .envelope import (
    Direction,
    EnvelopeError,
    RegimeError,
    dir_derivative,
    subdiff_estimate,
)
from .expr import EvalPoint, eval_expr, gradient, hessian
from .inner import InnerInfeasibleError, abnormal_multiplier_cone, solve_inner
from .lpcore import (
    DEDUP_TOL,
    LPError,
    Polyhedron,
    cone_only_zero,
    lp_feasible,
    lp_optimize,
    vertices,
)
from .model import BilevelProblem, active_set

__all__ = [
    "CERT_TOL",
    "CertifyError",
    "FeasibilityError",
    "MultiplierSet",
    "CriticalConeRow",
    "CriticalConeReport",
    "CQReport",
    "SamplingPlan",
    "StationarityCertificate",
    "SStationarityResult",
    "MpccComparison",
    "lower_multiplier_set",
    "in_critical_cone",
    "check_mfcq",
    "check_foscms_direction",
    "check_quasi_normality",
    "verify_stationarity",
    "verify_s_stationarity",
    "compare_with_mpcc",
]

# Certification tolerance: every certificate and verdict re-verifies to
# this; the LP kernel works an order tighter (1e-9).
CERT_TOL = 1e-8

_CHECK_NAMES = ("MFCQ", "FOSCMS-direction", "quasi-normality-direction")
_VERDICTS = ("holds", "fails", "certificate-modulo-sampling", "unchecked-hypothesis")
_SYSTEMS = ("skkt", "wckkt", "vp-moreau")


class CertifyError(RuntimeError):
    """Certification-level failure (bad direction, unusable hypothesis)."""


class FeasibilityError(CertifyError):
    """The queried point is not feasible for the reformulated problem."""


@dataclass(frozen=True)
class MultiplierSet:
    """Inner multiplier polyhedron at (x, y), optionally direction-pinned.

    base is the polyhedron of nonnegative multipliers that are
    stationary for the inner objective at y and vanish off the active
    set.  directional_rows, when present, are the extra equalities that
    pin the multipliers orthogonal to the constraint gradients moving
    along a direction; they are kept separate so callers can see what
    the direction added.
    """

    base: Polyhedron
    directional_rows: Optional[tuple] = None
    active_indices: Tuple[int, ...] = ()

    def polyhedron(self) -> Polyhedron:
        if self.directional_rows is None:
            return self.base
        A, b = self.base.eq
        R, r = self.directional_rows
        return Polyhedron(
            num_vars=self.base.num_vars,
            eq=(np.vstack([A, R]), np.concatenate([b, r])),
            ineq=self.base.ineq,
            nonneg_mask=self.base.nonneg_mask,
        )


@dataclass(frozen=True)
class CriticalConeRow:
    """One linearized row of the cone test: value must be <= 0."""

    name: str
    value: float
    ok: bool
    binding: bool


@dataclass(frozen=True)
class CriticalConeReport:
    inside: bool
    rows: Tuple[CriticalConeRow, ...]
    marginal: bool = False
    notes: Tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return self.inside

    def failures(self) -> Tuple[str, ...]:
        return tuple(r.name for r in self.rows if not r.ok)

    def binding(self) -> Tuple[str, ...]:
        return tuple(r.name for r in self.rows if r.ok and r.binding)


@dataclass(frozen=True)
class CQReport:
    """Outcome of one constraint-qualification check.

    sampling_evidence rows are (t, direction, values) triples recording
    what a probing sequence saw; they are mandatory for the
    certificate-modulo-sampling verdict, whose whole content is that
    the sampled sequences failed to produce a violation.
    """

    check: str
    verdict: str
    lp_witnesses: tuple = ()
    sampling_evidence: tuple = ()
    marginal: bool = False
    notes: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.check not in _CHECK_NAMES:
            raise ValueError(f"unknown check {self.check!r}")
        if self.verdict not in _VERDICTS:
            raise ValueError(f"unknown verdict {self.verdict!r}")
        if self.verdict == "certificate-modulo-sampling" and not self.sampling_evidence:
            raise ValueError("certificate-modulo-sampling requires sampling evidence")

    def __bool__(self) -> bool:
        return self.verdict in ("holds", "certificate-modulo-sampling")


@dataclass(frozen=True)
class SamplingPlan:
    """Probe schedule for sequential (limit-based) conditions."""

    ts: Tuple[float, ...] = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
    num_directions: int = 16
    half_angle: float = 0.1
    seed: int = 0

    def __post_init__(self):
        ts = tuple(float(t) for t in self.ts)
        if not ts or any(t <= 0 for t in ts):
            raise ValueError("sampling steps must be positive")
        object.__setattr__(self, "ts", ts)
        if self.num_directions < 1:
            raise ValueError("need at least one sampled direction")
        if not 0.0 <= self.half_angle < 1.0:
            raise ValueError("half_angle must sit in [0, 1)")


@dataclass(frozen=True)
class StationarityCertificate:
    """A verified multiplier vector for one of the stationarity systems.

    alpha scales the inner multiplier lambda_bar inside the system; the
    substitution mu = alpha * lambda_bar is how the search stays linear,
    and lambda_bar is recovered from mu afterwards.  residual is the
    largest violation over every defining row at the reported values.
    induced_s_stationary is the multiplier tuple (mu_G, mu_g, mu_e,
    mu_lambda) this certificate induces for the complementarity-based
    stationarity system.
    """

    system: str
    alpha: float
    lambda_g: Tuple[float, ...]
    lambda_G: Tuple[float, ...]
    lambda_bar: Tuple[float, ...]
    direction: Optional[Direction]
    residual: float
    induced_s_stationary: tuple
    marginal: bool = False
    notes: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.system not in _SYSTEMS:
            raise ValueError(f"unknown system {self.system!r}")
        if self.alpha < -CERT_TOL:
            raise ValueError("alpha must be nonnegative")
        if self.residual > CERT_TOL:
            raise ValueError(
                f"certificate residual {self.residual:.3e} exceeds {CERT_TOL:g}"
            )


@dataclass(frozen=True)
class SStationarityResult:
    holds: bool
    multipliers: Optional[tuple]
    residual: float
    marginal: bool = False
    notes: Tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return self.holds


@dataclass(frozen=True)
class MpccComparison:
    certificate: Optional[StationarityCertificate]
    s_result: Optional[SStationarityResult]
    directional_rows: Tuple[str, ...]
    notes: Tuple[str, ...] = ()


def _point(prob: BilevelProblem, x, y) -> EvalPoint:
    return EvalPoint.of(np.asarray(x, dtype=float), np.asarray(y, dtype=float))


def _grad_rows(exprs, pt) -> np.ndarray:
    if not exprs:
        return np.zeros((0, len(pt.x) + len(pt.y)))
    return np.array([gradient(e, pt) for e in exprs])


def _direction_arrays(prob: BilevelProblem, d: Direction):
    if len(d.u) != prob.n or len(d.v) != prob.m:
        raise ValueError(
            f"direction dimensions ({len(d.u)}, {len(d.v)}) do not match problem ({prob.n}, {prob.m})"
        )
    return d.joint()


def _envelope_gap(prob: BilevelProblem, x, y, inner_tol: float = 1e-10):
    """f(x, y) - v(x, y) and the inner solution; zero gap means feasible."""
    sol = solve_inner(prob, x, y, tol=inner_tol)
    fval = eval_expr(prob.f, _point(prob, x, y))
    return fval - sol.value, sol


def _require_vp_feasible(prob, x, y, tol=CERT_TOL):
    pt = _point(prob, x, y)
    act_g = active_set(prob.g, pt, tol=tol)  # raises when g is violated
    if prob.G:
        gvals = [eval_expr(Gi, pt) for Gi in prob.G]
        worst = max(gvals)
        if worst > tol:
            raise FeasibilityError(
                f"upper-level constraint value {worst:.3e} exceeds tolerance"
            )
    gap, sol = _envelope_gap(prob, x, y)
    if gap > tol:
        raise FeasibilityError(
            f"envelope gap f - v = {gap:.3e} at the queried point; the point is "
            "not a fixed point of the proximal map"
        )
    return pt, act_g, sol


def lower_multiplier_set(
    prob: BilevelProblem, x, y, d: Optional[Direction] = None, tol: float = CERT_TOL
) -> MultiplierSet:
    """Multipliers of the inner problem at y, optionally direction-pinned.

    The base polyhedron collects lam >= 0 with grad_y f + grad_y g^T lam
    = 0 and lam_i = 0 off the active set.  With a direction, the active
    rows must not increase to first order (a tangency check), and one
    extra equality pins lam orthogonal to the moving gradients.
    """
    pt = _point(prob, x, y)
    act = active_set(prob.g, pt, tol=tol)
    n, p = prob.n, prob.p
    gf = gradient(prob.f, pt)
    gg = _grad_rows(prob.g, pt)
    rows = [gg[:, n:].T]
    rhs = [-gf[n:]]
    for i in range(1, p + 1):
        if i not in act.indices:
            e = np.zeros(p)
            e[i - 1] = 1.0
            rows.append(e[None, :])
            rhs.append(np.zeros(1))
    base = Polyhedron(
        num_vars=p,
        eq=(np.vstack(rows), np.concatenate(rhs)),
        nonneg_mask=(True,) * p,
    )
    directional = None
    if d is not None:
        joint = _direction_arrays(prob, d)
        drift = gg @ joint
        worst = max((float(drift[i - 1]) for i in act.indices), default=0.0)
        if worst > 1e-9:
            raise CertifyError(
                f"direction leaves the linearized feasible region (active row "
                f"increases by {worst:.3e}); the directional multiplier set is "
                "not defined there"
            )
        row = np.zeros(p)
        for i in act.indices:
            row[i - 1] = float(drift[i - 1])
        directional = (row[None, :], np.zeros(1))
    return MultiplierSet(base=base, directional_rows=directional, active_indices=act.indices)


def in_critical_cone(
    prob: BilevelProblem,
    x,
    y,
    d: Direction,
    regime: Optional[str] = None,
    assume_hypotheses: bool = False,
    tol: float = CERT_TOL,
) -> CriticalConeReport:
    """Linearized cone test at a feasible point of the reformulation.

    Rows: the upper objective must not increase, active constraints of
    both levels must not increase, and the inner objective's linear
    change must match the envelope's directional derivative, which is
    bracketed (or given exactly) by the named regime.  regime defaults
    to the exact formula when the joint convexity flags are declared and
    to the bound pair otherwise.
    """
    joint = _direction_arrays(prob, d)
    pt, act_g, sol = _require_vp_feasible(prob, x, y, tol=tol)
    if regime is None:
        flags = prob.convexity_flags
        if flags.f == "jointly-weakly-convex" and flags.g == "jointly-quasiconvex":
            regime = "weakly-convex"
        else:
            regime = "dini"
    est = dir_derivative(prob, x, y, d, regime, assume_hypotheses=assume_hypotheses)

    rows = []

    def add(name, value):
        rows.append(
            CriticalConeRow(
                name=name,
                value=float(value),
                ok=value <= tol,
                binding=abs(value) <= tol,
            )
        )

    add("upper objective does not increase", float(gradient(prob.F, pt) @ joint))
    gg = _grad_rows(prob.g, pt)
    for i in act_g.indices:
        add(f"active lower constraint {i} does not increase", float(gg[i - 1] @ joint))
    if prob.G:
        act_G = active_set(prob.G, pt, tol=tol)
        GG = _grad_rows(prob.G, pt)
        for j in act_G.indices:
            add(f"active upper constraint {j} does not increase", float(GG[j - 1] @ joint))
    fdot = float(gradient(prob.f, pt) @ joint)
    add("inner objective change is at least the envelope derivative", est.lower - fdot)
    add("inner objective change is at most the envelope derivative", fdot - est.upper)

    inside = all(r.ok for r in rows)
    marginal = any(tol < r.value <= 10 * tol for r in rows)
    notes = tuple(est.notes) + (f"envelope derivative bounds from regime {regime}",)
    return CriticalConeReport(inside=inside, rows=tuple(rows), marginal=marginal, notes=notes)


def check_mfcq(prob: BilevelProblem, x, y, tol: float = CERT_TOL) -> CQReport:
    """Positive linear independence of the active inner gradients at y.

    Equivalent to the absence of a nonzero nonnegative multiplier that
    annihilates them; decided exactly by one cone LP.  The witness on
    failure is such a multiplier, re-verified before reporting.
    """
    cone = abnormal_multiplier_cone(prob, x, np.asarray(y, dtype=float), tol=tol)
    only_zero, witness = cone_only_zero(cone)
    if only_zero:
        return CQReport(check="MFCQ", verdict="holds")
    if not cone.contains(witness, tol=1e-9):
        raise LPError("abnormal multiplier witness failed re-verification")
    return CQReport(
        check="MFCQ",
        verdict="fails",
        lp_witnesses=(tuple(float(c) for c in witness),),
        notes=("nonzero nonnegative multiplier annihilates the active gradients",),
    )


def check_foscms_direction(
    prob: BilevelProblem, x, y, d: Direction, tol: float = CERT_TOL
) -> CQReport:
    """Directional first-order subregularity check for the inner system.

    Along a direction inside the linearized region, the condition asks
    for no nonzero nonnegative multiplier that annihilates the active
    gradients and is orthogonal to their drift along the direction.
    The reduction to that cone is only an equivalence when the active
    gradients actually move with the upper variables along u; the
    degenerate case (u nonzero but no gradient drift in x) is reported
    as an unchecked hypothesis rather than guessed.
    """
    joint = _direction_arrays(prob, d)
    pt = _point(prob, x, y)
    act = active_set(prob.g, pt, tol=tol)
    if not act.indices:
        return CQReport(
            check="FOSCMS-direction",
            verdict="holds",
            notes=("no active constraints; nothing to check",),
        )
    gg = _grad_rows(prob.g, pt)
    drift = gg @ joint
    worst = max(float(drift[i - 1]) for i in act.indices)
    if worst > 1e-9:
        return CQReport(
            check="FOSCMS-direction",
            verdict="holds",
            marginal=worst <= 1e-8,
            notes=(
                "direction leaves the linearized feasible region; no feasible "
                "sequence approaches along it and the condition is vacuous",
            ),
        )
    u = np.array(d.u, dtype=float)
    n = prob.n
    if n and float(np.max(np.abs(u))) > 0.0:
        x_drift = max(float(abs(gg[i - 1, :n] @ u)) for i in act.indices)
        if x_drift <= 1e-12:
            return CQReport(
                check="FOSCMS-direction",
                verdict="unchecked-hypothesis",
                notes=(
                    "upper component of the direction is nonzero but no active "
                    "gradient drifts with it; the cone reduction used here is "
                    "not known to be exact in that case",
                ),
            )
    cone = abnormal_multiplier_cone(prob, x, np.asarray(y, dtype=float), tol=tol)
    row = np.zeros(prob.p)
    for i in act.indices:
        row[i - 1] = float(drift[i - 1])
    A, b = cone.eq
    extended = Polyhedron(
        num_vars=prob.p,
        eq=(np.vstack([A, row[None, :]]), np.concatenate([b, [0.0]])),
        nonneg_mask=cone.nonneg_mask,
    )
    only_zero, witness = cone_only_zero(extended)
    if only_zero:
        return CQReport(check="FOSCMS-direction", verdict="holds")
    if not extended.contains(witness, tol=1e-9):
        raise LPError("directional abnormal multiplier witness failed re-verification")
    return CQReport(
        check="FOSCMS-direction",
        verdict="fails",
        lp_witnesses=(tuple(float(c) for c in witness),),
        notes=("nonzero directional abnormal multiplier found",),
    )


def _strictly_positive(value: float, scale: float) -> bool:
    return value > 1e-15 + 1e-12 * scale


def check_quasi_normality(
    prob: BilevelProblem,
    x,
    y,
    d: Direction,
    plan: Optional[SamplingPlan] = None,
    variant: str = "ii",
    hypotheses_asserted: bool = False,
    tol: float = CERT_TOL,
) -> CQReport:
    """Directional quasi-normality evidence for the reformulated problem.

    Step 1 is exact: assemble the homogeneous cone of candidate abnormal
    multipliers (alpha, nu_g, nu_G), with the envelope subdifferential
    replaced by the vertex family the chosen variant licenses, hull
    weights making the combination linear, directional sign structure on
    the constraint multipliers, and the derivative sandwich gating
    alpha.  An empty cone decides the condition outright: verdict holds.

    Step 2 only runs when a nonzero candidate exists.  The condition
    then hinges on whether some sequence approaching along d realizes
    the candidate's sign pattern; sequences are sampled along the plan's
    steps and jittered directions.  No realization over every extreme
    candidate yields "certificate-modulo-sampling" (evidence, not
    proof); a realization yields "fails" with the probe recorded first.

    Variant "i" rests on the bound-pair estimate (its gradient
    qualification is machine-checked here); "ii" needs the joint
    convexity flags plus a subregularity assertion; "iii" needs the
    restricted-range assertions.  Unverifiable hypotheses must be
    passed as hypotheses_asserted=True or the verdict is
    "unchecked-hypothesis".
    """
    if variant not in ("i", "ii", "iii"):
        raise CertifyError(f"unknown variant {variant!r}")
    plan = plan or SamplingPlan()
    joint = _direction_arrays(prob, d)
    pt, act_g, sol = _require_vp_feasible(prob, x, y, tol=tol)
    notes = []

    # Hypothesis gates per variant.
    if variant == "i":
        mfcq = check_mfcq(prob, x, y, tol=tol)
        if mfcq.verdict != "holds":
            return CQReport(
                check="quasi-normality-direction",
                verdict="unchecked-hypothesis",
                notes=(
                    "variant i needs positive linear independence of the active "
                    "gradients, which fails here",
                ),
            )
        subdiff_mode = "union"
    elif variant == "ii":
        flags = prob.convexity_flags
        if flags.f != "jointly-weakly-convex" or flags.g != "jointly-quasiconvex":
            return CQReport(
                check="quasi-normality-direction",
                verdict="unchecked-hypothesis",
                notes=("variant ii needs the joint convexity flags declared",),
            )
        if not hypotheses_asserted:
            return CQReport(
                check="quasi-normality-direction",
                verdict="unchecked-hypothesis",
                notes=(
                    "variant ii additionally needs a subregularity hypothesis this "
                    "toolkit cannot verify; pass hypotheses_asserted=True to assert it",
                ),
            )
        subdiff_mode = "directional"
    else:
        if not hypotheses_asserted:
            return CQReport(
                check="quasi-normality-direction",
                verdict="unchecked-hypothesis",
                notes=(
                    "variant iii needs restricted-range hypotheses this toolkit "
                    "cannot verify; pass hypotheses_asserted=True to assert them",
                ),
            )
        subdiff_mode = "rcr"

    # Envelope subdifferential vertices per the variant.
    sd = subdiff_estimate(prob, x, y, d, subdiff_mode)
    xis = [np.asarray(ptv, dtype=float) for ptv in sd.points]
    notes.extend(sd.notes)

    # Derivative sandwich along d gates the envelope-gap multiplier.
    regime = "weakly-convex" if variant == "ii" else ("rcr" if variant == "iii" else "dini")
    est = dir_derivative(
        prob, x, y, d, regime, assume_hypotheses=(variant != "i")
    )
    fdot = float(gradient(prob.f, pt) @ joint)
    if fdot > est.upper + 1e-9:
        return CQReport(
            check="quasi-normality-direction",
            verdict="holds",
            notes=tuple(notes)
            + (
                "the envelope gap strictly increases along the direction, so no "
                "feasible sequence approaches along it; condition vacuous",
            ),
        )
    alpha_forced_zero = fdot < est.lower - 1e-9
    if alpha_forced_zero:
        notes.append(
            "envelope gap strictly decreases along the direction; its multiplier "
            "is pinned to zero"
        )

    # Directional sign structure on the constraint multipliers.
    n, m, p, q = prob.n, prob.m, prob.p, prob.q
    gg = _grad_rows(prob.g, pt)
    GG = _grad_rows(prob.G, pt)
    g_drift = gg @ joint if p else np.zeros(0)
    G_drift = GG @ joint if q else np.zeros(0)
    act_G = active_set(prob.G, pt, tol=tol) if prob.G else None
    free_g, pinned_g, vacuous = [], [], False
    for i in range(1, p + 1):
        if i not in act_g.indices:
            pinned_g.append(i)
        elif g_drift[i - 1] > 1e-9:
            vacuous = True
        elif g_drift[i - 1] < -1e-9:
            pinned_g.append(i)
        else:
            free_g.append(i)
    free_G, pinned_G = [], []
    for j in range(1, q + 1):
        if act_G is None or j not in act_G.indices:
            pinned_G.append(j)
        elif G_drift[j - 1] > 1e-9:
            vacuous = True
        elif G_drift[j - 1] < -1e-9:
            pinned_G.append(j)
        else:
            free_G.append(j)
    if vacuous:
        return CQReport(
            check="quasi-normality-direction",
            verdict="holds",
            notes=tuple(notes)
            + (
                "an active constraint strictly increases along the direction; no "
                "feasible sequence approaches along it and the condition is vacuous",
            ),
        )

    # Cone variables: (alpha, hull weights s_k, nu_g, nu_G), all >= 0.
    K = len(xis)
    nv = 1 + K + p + q
    gF_f = gradient(prob.f, pt)
    eq_rows = []
    eq_rhs = []
    # stationarity: 0 = alpha grad f - sum_k s_k xi_k + grad g^T nu_g + grad G^T nu_G
    block = np.zeros((n + m, nv))
    block[:, 0] = gF_f
    for k, xi in enumerate(xis):
        block[:, 1 + k] = -xi
    if p:
        block[:, 1 + K : 1 + K + p] = gg.T
    if q:
        block[:, 1 + K + p :] = GG.T
    eq_rows.append(block)
    eq_rhs.append(np.zeros(n + m))
    # hull weights tie to alpha
    row = np.zeros(nv)
    row[0] = -1.0
    row[1 : 1 + K] = 1.0
    eq_rows.append(row[None, :])
    eq_rhs.append(np.zeros(1))
    # pins
    def pin(idx):
        e = np.zeros(nv)
        e[idx] = 1.0
        eq_rows.append(e[None, :])
        eq_rhs.append(np.zeros(1))

    if alpha_forced_zero:
        pin(0)
    for i in pinned_g:
        pin(1 + K + i - 1)
    for j in pinned_G:
        pin(1 + K + p + j - 1)
    cone = Polyhedron(
        num_vars=nv,
        eq=(np.vstack(eq_rows), np.concatenate(eq_rhs)),
        nonneg_mask=(True,) * nv,
    )
    only_zero, witness = cone_only_zero(cone)
    if only_zero:
        return CQReport(
            check="quasi-normality-direction", verdict="holds", notes=tuple(notes)
        )

    # Nonzero candidates exist; enumerate extreme ones when small enough.
    candidates = []
    if nv <= 12:
        A, b = cone.eq
        slice_row = np.ones(nv)
        sliced = Polyhedron(
            num_vars=nv,
            eq=(np.vstack([A, slice_row[None, :]]), np.concatenate([b, [1.0]])),
            nonneg_mask=(True,) * nv,
        )
        candidates = [np.asarray(v) for v in vertices(sliced)]
    if not candidates:
        candidates = [np.asarray(witness)]
        notes.append("candidate cone too large to enumerate; sampling its LP witness only")

    # Step 2: probe sequences along jittered directions.
    rng = np.random.default_rng(plan.seed)
    z0 = np.concatenate([np.asarray(x, dtype=float), np.asarray(y, dtype=float)])
    dir_norm = float(np.linalg.norm(joint))
    evidence = []
    realizing = None
    for cand in candidates:
        alpha_c = float(cand[0])
        nu_g = cand[1 + K : 1 + K + p]
        nu_G = cand[1 + K + p :]
        need_gap = alpha_c > 1e-9
        need_g = [i for i in range(p) if nu_g[i] > 1e-9]
        need_G = [j for j in range(q) if nu_G[j] > 1e-9]
        for t in plan.ts:
            for _ in range(plan.num_directions):
                jitter = rng.standard_normal(n + m)
                jn = float(np.linalg.norm(jitter))
                if jn > 0 and dir_norm > 0:
                    probe_dir = joint + plan.half_angle * dir_norm * jitter / jn
                else:
                    probe_dir = joint
                z = z0 + t * probe_dir
                xp, yp = z[:n], z[n:]
                ptp = EvalPoint.of(xp, yp)
                gvals = [eval_expr(gi, ptp) for gi in prob.g]
                Gvals = [eval_expr(Gj, ptp) for Gj in prob.G]
                try:
                    gap_p, _ = _envelope_gap(prob, xp, yp)
                except InnerInfeasibleError:
                    continue
                scale = 1.0 + float(np.max(np.abs(z)))
                ok = True
                if need_gap and not _strictly_positive(gap_p, scale):
                    ok = False
                if ok:
                    for i in need_g:
                        if not _strictly_positive(gvals[i], scale):
                            ok = False
                            break
                if ok:
                    for j in need_G:
                        if not _strictly_positive(Gvals[j], scale):
                            ok = False
                            break
                record = (
                    float(t),
                    tuple(float(c) for c in probe_dir),
                    (float(gap_p),) + tuple(float(v) for v in gvals) + tuple(float(v) for v in Gvals),
                )
                if ok:
                    realizing = record
                    break
                if len(evidence) < 64:
                    evidence.append(record)
            if realizing:
                break
        if realizing:
            break
    wit_tuples = tuple(tuple(float(c) for c in cand) for cand in candidates)
    if realizing:
        return CQReport(
            check="quasi-normality-direction",
            verdict="fails",
            lp_witnesses=wit_tuples,
            sampling_evidence=(realizing,),
            notes=tuple(notes)
            + ("a sampled sequence realizes the candidate's sign pattern",),
        )
    return CQReport(
        check="quasi-normality-direction",
        verdict="certificate-modulo-sampling",
        lp_witnesses=wit_tuples,
        sampling_evidence=tuple(evidence),
        marginal=False,
        notes=tuple(notes)
        + (
            "no sampled sequence realizes any candidate's sign pattern; the "
            "condition holds on the sampled evidence",
        ),
    )


def _certificate_rows(prob, pt, act_g, act_G, d: Optional[Direction]):
    """Equality system over z = (alpha, lambda_g, lambda_G, mu), all >= 0."""
    n, m, p, q = prob.n, prob.m, prob.p, prob.q
    nv = 1 + p + q + p
    gF = gradient(prob.F, pt)
    gf = gradient(prob.f, pt)
    gg = _grad_rows(prob.g, pt)
    GG = _grad_rows(prob.G, pt)
    eq_rows = []
    eq_rhs = []
    # stationarity in (x, y)
    block = np.zeros((n + m, nv))
    if p:
        block[:, 1 : 1 + p] = gg.T
        block[:, 1 + p + q :] = -gg.T
    if q:
        block[:, 1 + p : 1 + p + q] = GG.T
    eq_rows.append(block)
    eq_rhs.append(-gF)
    # homogenized membership of mu in alpha * (inner multiplier set)
    block = np.zeros((m, nv))
    block[:, 0] = gf[n:]
    if p:
        block[:, 1 + p + q :] = gg[:, n:].T
    eq_rows.append(block)
    eq_rhs.append(np.zeros(m))
    # complementarity pins off the active sets
    def pin(idx):
        e = np.zeros(nv)
        e[idx] = 1.0
        eq_rows.append(e[None, :])
        eq_rhs.append(np.zeros(1))

    for i in range(1, p + 1):
        if i not in act_g.indices:
            pin(i)  # lambda_g
            pin(p + q + i)  # mu
    for j in range(1, q + 1):
        if act_G is None or j not in act_G.indices:
            pin(p + j)
    row_descriptions = []
    if d is not None:
        joint = d.joint()
        drift = gg @ joint if p else np.zeros(0)
        row = np.zeros(nv)
        for i in act_g.indices:
            row[i] = float(drift[i - 1])
        eq_rows.append(row[None, :])
        eq_rhs.append(np.zeros(1))
        row_descriptions.append(
            "constraint multipliers orthogonal to the active gradient drift"
        )
        row = np.zeros(nv)
        for i in act_g.indices:
            row[p + q + i] = float(drift[i - 1])
        eq_rows.append(row[None, :])
        eq_rhs.append(np.zeros(1))
        row_descriptions.append(
            "inner multiplier pinned to the direction-orthogonal face"
        )
    return nv, (np.vstack(eq_rows), np.concatenate(eq_rhs)), row_descriptions


def _split_certificate_vars(prob, z):
    p, q = prob.p, prob.q
    alpha = float(z[0])
    lam_g = np.asarray(z[1 : 1 + p], dtype=float)
    lam_G = np.asarray(z[1 + p : 1 + p + q], dtype=float)
    mu = np.asarray(z[1 + p + q :], dtype=float)
    return alpha, lam_g, lam_G, mu


def verify_stationarity(
    prob: BilevelProblem,
    x,
    y,
    d: Optional[Direction] = None,
    system: str = "skkt",
    tol: float = CERT_TOL,
) -> Optional[StationarityCertificate]:
    """Search for a stationarity certificate at a feasible point.

    system "skkt" is the plain certificate; "wckkt" adds the directional
    orthogonality rows and requires d to lie in the critical cone;
    "vp-moreau" is accepted as an alias of "skkt" because substituting
    the envelope gradient into the reformulation's multiplier system
    reproduces the same rows.

    The search runs two exact LP branches: one with the envelope-gap
    multiplier pinned to zero (where the inner multiplier drops out) and
    one over strictly positive values.  Within each branch the reported
    certificate minimizes the multiplier mass, with the gap multiplier
    maximized among minimizers so repeated runs agree.  Returns None
    when neither branch is feasible, which is a finding, not an error.
    """
    if system not in _SYSTEMS:
        raise CertifyError(f"unknown system {system!r}")
    notes = []
    effective_direction = d
    if system == "vp-moreau":
        notes.append(
            "system rows coincide with the plain certificate after substituting "
            "the envelope gradient"
        )
        effective_direction = None
    if system == "skkt":
        effective_direction = None
    if system == "wckkt":
        if d is None:
            raise CertifyError("the directional system needs a direction")
        cone_rep = in_critical_cone(prob, x, y, d, tol=tol)
        if not cone_rep.inside:
            raise CertifyError(
                "direction is outside the critical cone: "
                + ", ".join(cone_rep.failures())
            )
    pt, act_g, sol = _require_vp_feasible(prob, x, y, tol=tol)
    act_G = active_set(prob.G, pt, tol=tol) if prob.G else None

    # The inner multiplier set itself must be nonempty.
    ms = lower_multiplier_set(prob, x, y, d=effective_direction, tol=tol)
    lam_poly = ms.polyhedron()
    lam_out = lp_feasible(lam_poly)
    if lam_out.status != "optimal":
        return None

    nv, eq, row_desc = _certificate_rows(prob, pt, act_g, act_G, effective_direction)
    p, q = prob.p, prob.q
    mass = np.zeros(nv)
    mass[0] = 1.0
    mass[1 : 1 + p + q] = 1.0  # lambda_g and lambda_G, not mu

    def branch_zero():
        A, b = eq
        pins = np.zeros((1 + p, nv))
        pins[0, 0] = 1.0
        for i in range(p):
            pins[1 + i, 1 + p + q + i] = 1.0
        poly = Polyhedron(
            num_vars=nv,
            eq=(np.vstack([A, pins]), np.concatenate([b, np.zeros(1 + p)])),
            nonneg_mask=(True,) * nv,
        )
        out = lp_optimize(mass, poly, sense="min")
        if out.status != "optimal":
            return None
        return out

    def branch_positive():
        alpha_obj = np.zeros(nv)
        alpha_obj[0] = 1.0
        poly = Polyhedron(num_vars=nv, eq=eq, nonneg_mask=(True,) * nv)
        top = lp_optimize(alpha_obj, poly, sense="max")
        if top.status == "infeasible":
            return None
        alpha_max = math.inf if top.status == "unbounded" else top.value
        if alpha_max <= 1e-9:
            return None
        floor = 1e-6 if math.isinf(alpha_max) else min(1.0, alpha_max) / 2.0
        floor = min(floor, 1e-6) if alpha_max >= 2e-6 else alpha_max / 2.0
        C = np.zeros((1, nv))
        C[0, 0] = -1.0
        floored = Polyhedron(
            num_vars=nv, eq=eq, ineq=(C, np.array([-floor])), nonneg_mask=(True,) * nv
        )
        out = lp_optimize(mass, floored, sense="min")
        if out.status != "optimal":
            return None
        # maximize alpha among the mass minimizers for determinism
        A, b = eq
        tie = Polyhedron(
            num_vars=nv,
            eq=(np.vstack([A, mass[None, :]]), np.concatenate([b, [out.value]])),
            ineq=(C, np.array([-floor])),
            nonneg_mask=(True,) * nv,
        )
        tie_out = lp_optimize(alpha_obj, tie, sense="max")
        if tie_out.status == "optimal":
            return tie_out
        return out

    zero_out = branch_zero()
    pos_out = branch_positive()
    chosen = None
    if zero_out is not None and pos_out is not None:
        zero_mass = float(mass @ zero_out.witness)
        pos_mass = float(mass @ pos_out.witness)
        # smaller multiplier mass wins; near-ties go to the positive branch
        chosen = zero_out if zero_mass < pos_mass - 1e-9 else pos_out
    else:
        chosen = zero_out if zero_out is not None else pos_out
    if chosen is None:
        return None

    alpha, lam_g, lam_G, mu = _split_certificate_vars(prob, chosen.witness)
    if alpha > 1e-9:
        lam_bar = mu / alpha
    else:
        lam_bar = np.asarray(lam_out.witness, dtype=float)
        notes.append(
            "gap multiplier is zero; the inner multiplier shown is a feasible "
            "representative and does not enter the system"
        )
    member_res = float(
        np.max(
            np.abs(
                gradient(prob.f, pt)[prob.n :]
                + (_grad_rows(prob.g, pt)[:, prob.n :].T @ lam_bar if p else 0.0)
            )
        )
    )
    if member_res > tol:
        notes.append(
            f"recovered inner multiplier has membership residual {member_res:.2e}"
        )
    full_poly = Polyhedron(num_vars=nv, eq=eq, nonneg_mask=(True,) * nv)
    residual = max(full_poly.max_violation(chosen.witness), 0.0)

    induced = (
        tuple(float(c) for c in lam_G),
        tuple(float(c) for c in (lam_g - mu)),
        (0.0,) * prob.m,
        (0.0,) * p,
    )
    sys_name = system
    return StationarityCertificate(
        system=sys_name,
        alpha=alpha,
        lambda_g=tuple(float(c) for c in lam_g),
        lambda_G=tuple(float(c) for c in lam_G),
        lambda_bar=tuple(float(c) for c in lam_bar),
        direction=d if system == "wckkt" else None,
        residual=float(residual),
        induced_s_stationary=induced,
        marginal=bool(chosen.marginal),
        notes=tuple(notes) + tuple(row_desc),
    )


def verify_s_stationarity(
    prob: BilevelProblem, x, y, lambda_bar, tol: float = CERT_TOL
) -> SStationarityResult:
    """Decide the complementarity-based stationarity system at (x, y, lam).

    The triple must satisfy the one-level complementarity reformulation
    of the bilevel constraints: primal feasibility, nonnegative lam
    complementary to g, and stationarity of the inner Lagrangian in y.
    The multiplier search is then an LP whose equality block needs the
    second derivatives of the inner Lagrangian; sign rules apply on the
    biactive index set, where neither the constraint nor its multiplier
    is away from zero.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lam = np.asarray(lambda_bar, dtype=float)
    n, m, p, q = prob.n, prob.m, prob.p, prob.q
    if lam.shape != (p,):
        raise ValueError(f"lambda_bar must have length {p}")
    pt = _point(prob, x, y)
    gvals = np.array([eval_expr(gi, pt) for gi in prob.g])
    Gvals = np.array([eval_expr(Gj, pt) for Gj in prob.G]) if prob.G else np.zeros(0)
    gf = gradient(prob.f, pt)
    gg = _grad_rows(prob.g, pt)
    lag_y = gf[n:] + (gg[:, n:].T @ lam if p else 0.0)
    problems = []
    if float(np.max(gvals)) > tol:
        problems.append(f"inner constraint violated by {float(np.max(gvals)):.2e}")
    if prob.G and float(np.max(Gvals)) > tol:
        problems.append(f"upper constraint violated by {float(np.max(Gvals)):.2e}")
    if float(np.min(lam, initial=0.0)) < -tol:
        problems.append("multiplier has a negative entry")
    comp = float(np.max(np.abs(lam * gvals))) if p else 0.0
    if comp > tol:
        problems.append(f"complementarity violated by {comp:.2e}")
    stat = float(np.max(np.abs(lag_y)))
    if stat > tol:
        problems.append(f"inner stationarity violated by {stat:.2e}")
    if problems:
        raise FeasibilityError("; ".join(problems))

    # index classification for the complementarity pair (g, lam)
    biactive = [
        j for j in range(p) if abs(gvals[j]) <= tol and lam[j] <= tol
    ]
    inactive = [j for j in range(p) if gvals[j] < -tol]
    supported = [j for j in range(p) if lam[j] > tol]

    # second derivatives of the inner Lagrangian, y-rows
    H = hessian(prob.f, pt)
    for j in range(p):
        if lam[j] != 0.0:
            H = H + lam[j] * hessian(prob.g[j], pt)
    M = H[n:, :]  # m x (n+m)

    GG = _grad_rows(prob.G, pt)
    gF = gradient(prob.F, pt)
    act_G = active_set(prob.G, pt, tol=tol) if prob.G else None

    # variables: mu_G (q), mu_g (p), mu_e (m); mu_lambda = grad_y g mu_e
    nv = q + p + m
    eq_rows = []
    eq_rhs = []
    block = np.zeros((n + m, nv))
    if q:
        block[:, :q] = GG.T
    if p:
        block[:, q : q + p] = gg.T
    block[:, q + p :] = M.T
    eq_rows.append(block)
    eq_rhs.append(-gF)
    ineq_rows = []
    ineq_rhs = []
    gy = gg[:, n:] if p else np.zeros((0, m))

    def pin(idx):
        e = np.zeros(nv)
        e[idx] = 1.0
        eq_rows.append(e[None, :])
        eq_rhs.append(np.zeros(1))

    for j in range(1, q + 1):
        if act_G is None or j not in act_G.indices:
            pin(j - 1)
    for j in inactive:
        pin(q + j)
    for j in supported:
        row = np.zeros(nv)
        row[q + p :] = gy[j]
        eq_rows.append(row[None, :])
        eq_rhs.append(np.zeros(1))
    for j in biactive:
        row = np.zeros(nv)
        row[q + p :] = -gy[j]
        ineq_rows.append(row)
        ineq_rhs.append(0.0)
    mask = [True] * q + [False] * p + [False] * m
    for j in biactive:
        mask[q + j] = True
    poly = Polyhedron(
        num_vars=nv,
        eq=(np.vstack(eq_rows), np.concatenate(eq_rhs)),
        ineq=(np.vstack(ineq_rows), np.array(ineq_rhs)) if ineq_rows else None,
        nonneg_mask=tuple(mask),
    )
    out = lp_feasible(poly)
    if out.status != "optimal":
        return SStationarityResult(
            holds=False,
            multipliers=None,
            residual=float(out.value),
            marginal=bool(out.marginal),
            notes=("multiplier system infeasible",),
        )
    z = np.asarray(out.witness, dtype=float)
    mu_G = z[:q]
    mu_g = z[q : q + p]
    mu_e = z[q + p :]
    mu_lam = gy @ mu_e if p else np.zeros(0)
    residual = max(poly.max_violation(z), 0.0)
    return SStationarityResult(
        holds=True,
        multipliers=(
            tuple(float(c) for c in mu_G),
            tuple(float(c) for c in mu_g),
            tuple(float(c) for c in mu_e),
            tuple(float(c) for c in mu_lam),
        ),
        residual=float(residual),
        marginal=bool(out.marginal),
    )


def compare_with_mpcc(
    prob: BilevelProblem, x, y, d: Optional[Direction] = None, tol: float = CERT_TOL
) -> MpccComparison:
    """Put the certificate system next to the complementarity one.

    Runs the certificate search (directional when d is given), maps any
    certificate to its induced multipliers, and checks those against
    the complementarity-based system directly.  When no certificate
    exists the comparison still evaluates the weaker system with a
    representative inner multiplier, so a gap between the two notions
    shows up as "weaker holds, stronger does not".
    """
    system = "wckkt" if d is not None else "skkt"
    cert = verify_stationarity(prob, x, y, d=d, system=system, tol=tol)
    notes = []
    directional_rows: Tuple[str, ...] = ()
    if d is not None:
        pt = _point(prob, x, y)
        act = active_set(prob.g, pt, tol=tol)
        gg = _grad_rows(prob.g, pt)
        drift = gg @ d.joint() if prob.p else np.zeros(0)
        directional_rows = tuple(
            f"active constraint {i}: gradient drift {float(drift[i - 1]):+.6g} "
            "enters both orthogonality rows"
            for i in act.indices
        )
    if cert is not None:
        lam_bar = np.asarray(cert.lambda_bar, dtype=float)
        notes.append("certificate found; checking its induced multipliers")
    else:
        ms = lower_multiplier_set(prob, x, y, tol=tol)
        out = lp_feasible(ms.polyhedron())
        if out.status != "optimal":
            return MpccComparison(
                certificate=None,
                s_result=None,
                directional_rows=directional_rows,
                notes=("no inner multiplier exists; neither system applies",),
            )
        lam_bar = np.asarray(out.witness, dtype=float)
        notes.append(
            "no certificate for the stronger system; evaluating the weaker one "
            "with a representative inner multiplier"
        )
    s_res = verify_s_stationarity(prob, x, y, lam_bar, tol=tol)
    if cert is not None and not s_res.holds:
        notes.append(
            "containment violated: certificate present but the weaker system "
            "reports infeasible; this should never happen"
        )
    if cert is None and s_res.holds:
        notes.append(
            "gap observed: the weaker system holds here without a certificate "
            "for the stronger one (the containment runs one way only)"
        )
    return MpccComparison(
        certificate=cert,
        s_result=s_res,
        directional_rows=directional_rows,
        notes=tuple(notes),
    )
