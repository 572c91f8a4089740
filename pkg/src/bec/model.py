"""Bilevel problem data model, problem files, and validation.

A problem holds the upper objective F with constraints G <= 0 and the
lower objective f with constraints g <= 0, together with the envelope
parameter gamma and the declared weak-convexity modulus rho_f of f in
the lower variables.  Instances are immutable; everything downstream
(envelope evaluation, certification) treats them as shared read-only
data.

Two gamma bounds appear on purpose.  Constructing a problem requires
only gamma < 1/rho_f, which is what keeps the proximal subproblem
strongly convex and the envelope well defined.  Reading a problem file
additionally enforces the stricter published regime gamma < 1/(2 rho_f)
so that stored problems always sit in the comfortable zone; validate()
reports which of the two regimes a problem actually occupies.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .expr import (
    DomainError,
    EvalPoint,
    Expr,
    eval_expr,
    format_expr,
    hessian,
    max_indices,
    parse_expr,
)

__all__ = [
    "F_CONVEXITY_FLAGS",
    "G_CONVEXITY_FLAGS",
    "DEFAULT_ACTIVE_TOL",
    "ConvexityFlags",
    "BilevelProblem",
    "ActiveSet",
    "ValidationReport",
    "ProblemFormatError",
    "InfeasiblePointError",
    "load_problem",
    "save_problem",
    "validate",
    "active_set",
]

F_CONVEXITY_FLAGS = ("jointly-weakly-convex", "y-weakly-convex", "none")
G_CONVEXITY_FLAGS = ("jointly-quasiconvex", "y-quasiconvex", "none")

DEFAULT_ACTIVE_TOL = 1e-8


class ProblemFormatError(ValueError):
    """Problem-file text violates the format or its declared ranges."""


class InfeasiblePointError(ValueError):
    """A point claimed feasible violates constraints; lists the indices."""

    def __init__(self, violated, values):
        self.violated = tuple(violated)
        detail = ", ".join(f"constraint {i} = {v:.3e}" for i, v in zip(violated, values))
        super().__init__(f"point is infeasible: {detail}")


@dataclass(frozen=True)
class ConvexityFlags:
    f: str = "none"
    g: str = "none"

    def __post_init__(self):
        if self.f not in F_CONVEXITY_FLAGS:
            raise ValueError(f"unknown f convexity flag '{self.f}'")
        if self.g not in G_CONVEXITY_FLAGS:
            raise ValueError(f"unknown g convexity flag '{self.g}'")


@dataclass(frozen=True)
class BilevelProblem:
    n: int
    m: int
    F: Expr
    G: Tuple[Expr, ...]
    f: Expr
    g: Tuple[Expr, ...]
    gamma: float
    rho_f: float
    convexity_flags: ConvexityFlags = field(default_factory=ConvexityFlags)

    def __post_init__(self):
        object.__setattr__(self, "G", tuple(self.G))
        object.__setattr__(self, "g", tuple(self.g))
        if self.n < 0 or self.m < 1:
            raise ValueError("need n >= 0 and m >= 1")
        if not self.g:
            raise ValueError(
                "lower level needs at least one constraint; encode 'none' as the "
                "constant row -1 <= 0"
            )
        if not (self.gamma > 0):
            raise ValueError("gamma must be positive")
        if self.rho_f < 0:
            raise ValueError("rho_f must be nonnegative")
        if self.rho_f > 0 and self.gamma >= 1.0 / self.rho_f:
            raise ValueError(
                "gamma >= 1/rho_f leaves the proximal subproblem nonconvex; "
                "the envelope is not well defined there"
            )
        for label, e in self._all_exprs():
            xi, yi = max_indices(e)
            if xi > self.n or yi > self.m:
                raise ValueError(
                    f"{label} references x{xi}/y{yi} beyond dimensions ({self.n}, {self.m})"
                )

    def _all_exprs(self):
        yield "F", self.F
        for i, e in enumerate(self.G, start=1):
            yield f"G{i}", e
        yield "f", self.f
        for i, e in enumerate(self.g, start=1):
            yield f"g{i}", e

    @property
    def p(self) -> int:
        return len(self.g)

    @property
    def q(self) -> int:
        return len(self.G)

    def in_strict_gamma_regime(self) -> bool:
        return self.rho_f == 0 or self.gamma < 1.0 / (2.0 * self.rho_f)


@dataclass(frozen=True)
class ActiveSet:
    """1-based indices of constraints sitting on their boundary at a point."""

    indices: Tuple[int, ...]
    tolerance: float


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    gamma_regime: str  # "strict" below 1/(2 rho_f), else "extended"
    rho_f_consistent: bool
    min_curvature_seen: float  # smallest eigenvalue of the y-block Hessian of f
    dimensions_ok: bool
    messages: Tuple[str, ...]


# ---------------------------------------------------------------------------
# problem files


def _unquote(raw: str) -> str:
    s = raw.strip()
    if len(s) >= 2 and s[0] == '"' and s[-1] == '"':
        return s[1:-1]
    return s


def _split_constraints(raw: str) -> List[str]:
    return [piece for piece in (_unquote(c) for c in raw.split(";")) if piece]


_SECTION_KEYS = {
    "problem": {"n", "m", "gamma", "rho_f", "f_convexity", "g_convexity"},
    "upper": {"objective", "constraints"},
    "lower": {"objective", "constraints"},
}


def _parse_sections(text: str):
    sections = {name: {} for name in _SECTION_KEYS}
    current = None
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in sections:
                raise ProblemFormatError(f"line {lineno}: unknown section [{name}]")
            current = name
            continue
        if "=" not in line:
            raise ProblemFormatError(f"line {lineno}: expected 'key = value'")
        if current is None:
            raise ProblemFormatError(f"line {lineno}: key outside any section")
        key, value = line.split("=", 1)
        key = key.strip()
        if key not in _SECTION_KEYS[current]:
            raise ProblemFormatError(f"line {lineno}: unknown key '{key}' in [{current}]")
        if key in sections[current]:
            raise ProblemFormatError(f"line {lineno}: duplicate key '{key}'")
        sections[current][key] = value.strip()
    return sections


def _require(sections, section, key):
    if key not in sections[section]:
        raise ProblemFormatError(f"missing key '{key}' in [{section}]")
    return sections[section][key]


def load_problem(text: str) -> BilevelProblem:
    """Parse problem-file text into a validated BilevelProblem."""
    sections = _parse_sections(text)
    try:
        n = int(_require(sections, "problem", "n"))
        m = int(_require(sections, "problem", "m"))
        gamma = float(_require(sections, "problem", "gamma"))
        rho_f = float(_require(sections, "problem", "rho_f"))
    except ValueError as err:
        if isinstance(err, ProblemFormatError):
            raise
        raise ProblemFormatError(f"bad numeric value in [problem]: {err}") from None
    if gamma <= 0:
        raise ProblemFormatError("gamma must be positive")
    if rho_f < 0:
        raise ProblemFormatError("rho_f must be nonnegative")
    if rho_f > 0 and gamma >= 1.0 / (2.0 * rho_f):
        raise ProblemFormatError(
            f"gamma = {gamma} is outside the strict regime (0, {1.0 / (2.0 * rho_f)}) "
            f"for rho_f = {rho_f}"
        )
    flags = ConvexityFlags(
        f=sections["problem"].get("f_convexity", "none"),
        g=sections["problem"].get("g_convexity", "none"),
    )
    F = parse_expr(_unquote(_require(sections, "upper", "objective")), n, m)
    G = tuple(parse_expr(s, n, m) for s in _split_constraints(sections["upper"].get("constraints", "")))
    f = parse_expr(_unquote(_require(sections, "lower", "objective")), n, m)
    g_texts = _split_constraints(sections["lower"].get("constraints", ""))
    if g_texts:
        g = tuple(parse_expr(s, n, m) for s in g_texts)
    else:
        g = (parse_expr("-1", n, m),)
    return BilevelProblem(
        n=n, m=m, F=F, G=G, f=f, g=g, gamma=gamma, rho_f=rho_f, convexity_flags=flags
    )


def save_problem(prob: BilevelProblem) -> str:
    """Canonical problem-file text; load_problem inverts it exactly."""
    lines = [
        "[problem]",
        f"n = {prob.n}",
        f"m = {prob.m}",
        f"gamma = {prob.gamma!r}",
        f"rho_f = {prob.rho_f!r}",
        f"f_convexity = {prob.convexity_flags.f}",
        f"g_convexity = {prob.convexity_flags.g}",
        "",
        "[upper]",
        f'objective = "{format_expr(prob.F)}"',
        "constraints = " + " ; ".join(f'"{format_expr(e)}"' for e in prob.G),
        "",
        "[lower]",
        f'objective = "{format_expr(prob.f)}"',
        "constraints = " + " ; ".join(f'"{format_expr(e)}"' for e in prob.g),
        "",
    ]
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# validation and active sets


def _default_sample_points(prob: BilevelProblem, count: int = 100):
    rng = np.random.default_rng(0)
    pts = []
    for _ in range(count):
        x = rng.uniform(-2.0, 2.0, prob.n)
        y = rng.uniform(-2.0, 2.0, prob.m)
        pts.append(EvalPoint(tuple(x), tuple(y)))
    return pts


def validate(prob: BilevelProblem, points: Optional[Sequence[EvalPoint]] = None) -> ValidationReport:
    """Sample-check the declared rho_f and report the gamma regime.

    The curvature check looks at the y-block of the Hessian of f on the
    given points (a seeded 100-point cloud on [-2, 2]^(n+m) by default)
    and accepts when its smallest eigenvalue stays above -rho_f - 1e-8.
    A finite sample can refute the declared modulus, never certify it.
    """
    messages = []
    dims_ok = True
    for label, e in prob._all_exprs():
        xi, yi = max_indices(e)
        if xi > prob.n or yi > prob.m:
            dims_ok = False
            messages.append(f"{label} exceeds declared dimensions")
    if points is None:
        points = _default_sample_points(prob)
    min_eig = np.inf
    skipped = 0
    for pt in points:
        try:
            H = hessian(prob.f, pt)
        except DomainError:
            skipped += 1
            continue
        Hyy = H[prob.n :, prob.n :]
        min_eig = min(min_eig, float(np.linalg.eigvalsh(Hyy)[0]))
    if skipped:
        messages.append(f"curvature sampling skipped {skipped} out-of-domain points")
    rho_ok = bool(min_eig >= -prob.rho_f - 1e-8)
    if not rho_ok:
        messages.append(
            f"declared rho_f = {prob.rho_f} refuted: found y-curvature {min_eig:.6g}"
        )
    regime = "strict" if prob.in_strict_gamma_regime() else "extended"
    if regime == "extended":
        messages.append(
            "gamma sits in (1/(2 rho_f), 1/rho_f): envelope well defined, "
            "published guarantees may need the strict regime"
        )
    return ValidationReport(
        ok=bool(dims_ok and rho_ok),
        gamma_regime=regime,
        rho_f_consistent=rho_ok,
        min_curvature_seen=float(min_eig),
        dimensions_ok=dims_ok,
        messages=tuple(messages),
    )


def active_set(constraints: Sequence[Expr], point: EvalPoint, tol: float = DEFAULT_ACTIVE_TOL) -> ActiveSet:
    """1-based indices of constraints with value in [-tol, tol] at point.

    Raises InfeasiblePointError when any constraint value exceeds tol;
    callers must not ask for active sets at infeasible points.
    """
    values = [eval_expr(e, point) for e in constraints]
    violated = [(i, v) for i, v in enumerate(values, start=1) if v > tol]
    if violated:
        raise InfeasiblePointError([i for i, _ in violated], [v for _, v in violated])
    indices = tuple(i for i, v in enumerate(values, start=1) if abs(v) <= tol)
    return ActiveSet(indices=indices, tolerance=tol)
