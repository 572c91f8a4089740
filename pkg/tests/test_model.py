from pathlib import Path

import numpy as np
import pytest

from bec.expr import EvalPoint, ParseError, parse_expr
from bec.model import (
    ActiveSet,
    BilevelProblem,
    ConvexityFlags,
    InfeasiblePointError,
    ProblemFormatError,
    active_set,
    load_problem,
    save_problem,
    validate,
)

PROBLEMS = Path(__file__).resolve().parent.parent / "problems"


def load_fixture(name):
    return load_problem((PROBLEMS / name).read_text())


EX51_TEXT = """
[problem]
n = 1
m = 1
gamma = {gamma}
rho_f = 2.0
f_convexity = jointly-weakly-convex
g_convexity = jointly-quasiconvex

[upper]
objective = "(x1 - y1)^2"
constraints =

[lower]
objective = "0 - (x1 - y1)^2"
constraints = "y1 - x1 - 1" ; "x1 - y1 - 1"
"""


def test_load_two_branch_problem():
    prob = load_problem(EX51_TEXT.format(gamma=0.2))
    assert (prob.n, prob.m, prob.p, prob.q) == (1, 1, 2, 0)
    assert prob.gamma == 0.2
    assert prob.convexity_flags.f == "jointly-weakly-convex"
    assert prob.F == parse_expr("(x1 - y1)^2", 1, 1)


def test_gamma_bound_is_strict_for_files():
    # 1/(2 rho_f) = 0.25 exactly on the boundary is rejected
    with pytest.raises(ProblemFormatError, match="strict regime"):
        load_problem(EX51_TEXT.format(gamma=0.25))
    load_problem(EX51_TEXT.format(gamma=0.2))


def test_gamma_must_be_positive():
    with pytest.raises(ProblemFormatError, match="gamma must be positive"):
        load_problem(EX51_TEXT.format(gamma=-1))


def test_no_lower_constraints_becomes_constant_row():
    prob = load_fixture("prox_toy.blp")
    assert prob.p == 1
    assert prob.g[0] == parse_expr("-1", 1, 1)
    assert prob.rho_f == 0.0


def test_constructor_allows_extended_regime():
    # direct construction only needs gamma < 1/rho_f
    prob = BilevelProblem(
        n=1,
        m=1,
        F=parse_expr("(x1 - y1)^2", 1, 1),
        G=(),
        f=parse_expr("0 - (x1 - y1)^2", 1, 1),
        g=(parse_expr("y1 - x1 - 1", 1, 1), parse_expr("x1 - y1 - 1", 1, 1)),
        gamma=0.49,
        rho_f=2.0,
    )
    assert not prob.in_strict_gamma_regime()
    with pytest.raises(ValueError, match="nonconvex"):
        BilevelProblem(
            n=1,
            m=1,
            F=parse_expr("x1", 1, 1),
            G=(),
            f=parse_expr("0 - y1^2", 1, 1),
            g=(parse_expr("-1", 1, 1),),
            gamma=0.5,
            rho_f=2.0,
        )


def test_dimension_mismatch_rejected():
    with pytest.raises(ParseError, match="out of range"):
        load_problem(EX51_TEXT.format(gamma=0.2).replace("(x1 - y1)^2", "(x2 - y1)^2"))


def test_unknown_key_and_section_rejected():
    with pytest.raises(ProblemFormatError, match="unknown key"):
        load_problem(EX51_TEXT.format(gamma=0.2) + "\nrho_g = 1\n")
    with pytest.raises(ProblemFormatError, match="unknown section"):
        load_problem("[extras]\nfoo = 1\n" + EX51_TEXT.format(gamma=0.2))


def test_save_load_round_trip_on_fixtures():
    for name in ("ex51.blp", "prox_toy.blp", "coupled2d.blp"):
        prob = load_fixture(name)
        assert load_problem(save_problem(prob)) == prob


def test_validate_accepts_declared_modulus():
    prob = load_fixture("ex51.blp")
    report = validate(prob)
    assert report.ok
    assert report.rho_f_consistent
    assert report.min_curvature_seen == pytest.approx(-2.0, abs=1e-12)
    assert report.gamma_regime == "strict"


def test_validate_refutes_understated_modulus():
    prob = load_fixture("ex51.blp")
    weakened = BilevelProblem(
        n=prob.n,
        m=prob.m,
        F=prob.F,
        G=prob.G,
        f=prob.f,
        g=prob.g,
        gamma=0.2,
        rho_f=1.0,  # true y-curvature of f is -2
        convexity_flags=prob.convexity_flags,
    )
    report = validate(weakened)
    assert not report.ok
    assert not report.rho_f_consistent
    assert any("refuted" in msg for msg in report.messages)


def test_validate_reports_extended_regime():
    prob = load_fixture("ex51.blp")
    wide = BilevelProblem(
        n=prob.n, m=prob.m, F=prob.F, G=prob.G, f=prob.f, g=prob.g,
        gamma=0.4, rho_f=2.0, convexity_flags=prob.convexity_flags,
    )
    report = validate(wide)
    assert report.gamma_regime == "extended"
    assert report.ok  # regime is reported, not failed


def test_validate_linear_f_zero_modulus():
    prob = load_problem(
        "[problem]\nn = 1\nm = 1\ngamma = 1.0\nrho_f = 0.0\n"
        '[upper]\nobjective = "x1"\n'
        '[lower]\nobjective = "y1 + x1"\n'
    )
    report = validate(prob)
    assert report.ok and report.min_curvature_seen == 0.0


def test_active_set_two_branch_reference_point():
    prob = load_fixture("ex51.blp")
    out = active_set(prob.g, EvalPoint((0.0,), (-1.0,)), tol=1e-8)
    assert out == ActiveSet(indices=(2,), tolerance=1e-8)
    out = active_set(prob.g, EvalPoint((0.0,), (0.0,)), tol=1e-8)
    assert out.indices == ()


def test_active_set_rejects_infeasible_point():
    prob = load_fixture("ex51.blp")
    with pytest.raises(InfeasiblePointError) as exc:
        active_set(prob.g, EvalPoint((0.0,), (-1.1,)), tol=1e-8)
    assert exc.value.violated == (2,)


def test_active_set_monotone_in_tolerance():
    prob = load_fixture("coupled2d.blp")
    rng = np.random.default_rng(5)
    checked = 0
    for _ in range(200):
        pt = EvalPoint(tuple(rng.uniform(-2, 2, 1)), tuple(rng.uniform(-2, 2, 2)))
        tols = sorted(rng.uniform(1e-10, 1e-1, 2))
        try:
            small = active_set(prob.g, pt, tol=tols[0])
            big = active_set(prob.g, pt, tol=tols[1])
        except InfeasiblePointError:
            continue
        assert set(small.indices) <= set(big.indices)
        checked += 1
    assert checked > 50


def test_bad_convexity_flag_rejected():
    with pytest.raises(ValueError, match="flag"):
        ConvexityFlags(f="convex")
