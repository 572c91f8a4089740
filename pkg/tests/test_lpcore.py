import math

import numpy as np
import pytest

from bec.lpcore import (
    DEDUP_TOL,
    FEAS_TOL,
    LPError,
    Polyhedron,
    cone_only_zero,
    lp_feasible,
    lp_optimize,
    vertices,
)
from util_polyhedra import random_bounded_polyhedron


def multiplier_set_at_example_point():
    # lower-level multiplier set at the reference point of the two-branch
    # problem: one stationarity row and one complementary-slackness row
    return Polyhedron(
        num_vars=2,
        eq=(np.array([[1.0, -1.0], [-2.0, 0.0]]), np.array([-2.0, 0.0])),
        nonneg_mask=(True, True),
    )


# ---------------------------------------------------------------------------
# feasibility


def test_feasible_singleton_multiplier_set():
    out = lp_feasible(multiplier_set_at_example_point())
    assert out.status == "optimal"
    assert np.allclose(out.witness, [0.0, 2.0], atol=1e-9)


def test_infeasible_sign_clash():
    P = Polyhedron(num_vars=1, eq=(np.array([[1.0]]), np.array([-1.0])), nonneg_mask=(True,))
    out = lp_feasible(P)
    assert out.status == "infeasible"
    assert out.value > FEAS_TOL


def test_feasible_unconstrained_single_var():
    out = lp_feasible(Polyhedron(num_vars=1))
    assert out.status == "optimal"
    assert np.allclose(out.witness, [0.0])


# ---------------------------------------------------------------------------
# optimization


def test_zero_objective_over_singleton():
    out = lp_optimize(np.zeros(2), multiplier_set_at_example_point(), sense="max")
    assert out.status == "optimal"
    assert out.value == pytest.approx(0.0, abs=1e-12)


def test_max_over_simplex():
    P = Polyhedron(
        num_vars=2,
        eq=(np.array([[1.0, 1.0]]), np.array([1.0])),
        nonneg_mask=(True, True),
    )
    out = lp_optimize(np.array([1.0, 0.0]), P, sense="max")
    assert out.status == "optimal"
    assert out.value == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(out.witness, [1.0, 0.0], atol=1e-9)


def test_unbounded_ray_witness():
    P = Polyhedron(num_vars=1, nonneg_mask=(True,))
    out = lp_optimize(np.array([1.0]), P, sense="max")
    assert out.status == "unbounded"
    assert math.isinf(out.value) and out.value > 0
    assert np.allclose(out.witness, [1.0])


def test_unbounded_direction_improves_and_recedes():
    # unbounded below in the unsigned coordinate
    P = Polyhedron(
        num_vars=2,
        ineq=(np.array([[1.0, 1.0]]), np.array([1.0])),
        nonneg_mask=(True, False),
    )
    c = np.array([0.0, 1.0])
    out = lp_optimize(c, P, sense="min")
    assert out.status == "unbounded"
    d = out.witness
    assert np.sum(np.abs(d)) == pytest.approx(1.0)
    A, b = P.ineq
    assert np.all(A @ d <= 1e-9)
    assert d[0] >= -1e-9
    assert float(c @ d) < 0


def test_bad_sense_rejected():
    with pytest.raises(ValueError):
        lp_optimize(np.zeros(1), Polyhedron(num_vars=1), sense="sup")


# ---------------------------------------------------------------------------
# homogeneous cones


def test_cone_with_scaling_ray():
    P = Polyhedron(
        num_vars=2,
        eq=(np.array([[-2.0, 1.0]]), np.array([0.0])),
        nonneg_mask=(True, True),
    )
    only_zero, w = cone_only_zero(P)
    assert not only_zero
    assert np.sum(np.abs(w)) == pytest.approx(1.0)
    assert np.allclose(w, [1.0 / 3.0, 2.0 / 3.0], atol=1e-9)


def test_cone_pinched_to_origin():
    P = Polyhedron(
        num_vars=1,
        ineq=(np.array([[1.0]]), np.array([0.0])),
        nonneg_mask=(True,),
    )
    only_zero, w = cone_only_zero(P)
    assert only_zero and w is None


def test_cone_diagonal_witness():
    P = Polyhedron(
        num_vars=2,
        eq=(np.array([[1.0, -1.0]]), np.array([0.0])),
        nonneg_mask=(True, True),
    )
    only_zero, w = cone_only_zero(P)
    assert not only_zero
    assert np.allclose(w, [0.5, 0.5], atol=1e-9)


def test_cone_rejects_inhomogeneous_input():
    P = Polyhedron(num_vars=1, eq=(np.array([[1.0]]), np.array([1.0])))
    with pytest.raises(ValueError):
        cone_only_zero(P)


def test_cone_unsigned_coordinate_found_negative():
    # only constraint pins the first coordinate; second is free
    P = Polyhedron(
        num_vars=2,
        eq=(np.array([[1.0, 0.0]]), np.array([0.0])),
        nonneg_mask=(True, False),
    )
    only_zero, w = cone_only_zero(P)
    assert not only_zero
    assert abs(w[0]) <= 1e-9 and abs(abs(w[1]) - 1.0) <= 1e-9


# ---------------------------------------------------------------------------
# vertices


def test_vertices_of_singleton_multiplier_set():
    vs = vertices(multiplier_set_at_example_point())
    assert len(vs) == 1
    assert np.allclose(vs[0], [0.0, 2.0], atol=1e-7)


def test_vertices_of_unit_simplex():
    P = Polyhedron(
        num_vars=2,
        eq=(np.array([[1.0, 1.0]]), np.array([1.0])),
        nonneg_mask=(True, True),
    )
    vs = vertices(P)
    assert len(vs) == 2
    assert np.allclose(vs[0], [0.0, 1.0], atol=1e-9)
    assert np.allclose(vs[1], [1.0, 0.0], atol=1e-9)


def test_vertices_of_infeasible_set_empty():
    P = Polyhedron(num_vars=1, eq=(np.array([[1.0]]), np.array([-1.0])), nonneg_mask=(True,))
    assert vertices(P) == []


def test_vertices_dimension_guard():
    with pytest.raises(LPError):
        vertices(Polyhedron(num_vars=13))


def test_vertices_dedupe_degenerate_corner():
    # three inequalities meet at the origin of a 2d cone
    P = Polyhedron(
        num_vars=2,
        ineq=(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]), np.zeros(3)),
        nonneg_mask=(True, True),
    )
    vs = vertices(P)
    assert len(vs) == 1
    assert np.allclose(vs[0], [0.0, 0.0], atol=DEDUP_TOL)


# ---------------------------------------------------------------------------
# randomized cross-checks


def test_minmax_sign_symmetry_and_witness_quality():
    rng = np.random.default_rng(2024)
    for trial in range(200):
        nv = int(rng.integers(2, 6))
        P, _ = random_bounded_polyhedron(rng, nv)
        c = rng.normal(size=nv)
        hi = lp_optimize(c, P, sense="max")
        lo = lp_optimize(-c, P, sense="min")
        assert hi.status == "optimal" and lo.status == "optimal", trial
        assert hi.value == pytest.approx(-lo.value, abs=1e-8)
        assert P.max_violation(hi.witness) <= FEAS_TOL
        assert P.max_violation(lo.witness) <= FEAS_TOL


def test_optimizer_agrees_with_vertex_scan():
    rng = np.random.default_rng(7)
    for trial in range(40):
        nv = int(rng.integers(2, 5))
        P, _ = random_bounded_polyhedron(rng, nv)
        vs = vertices(P)
        assert vs, trial
        for v in vs:
            assert P.max_violation(v) <= FEAS_TOL
        c = rng.normal(size=nv)
        out = lp_optimize(c, P, sense="max")
        best = max(float(c @ v) for v in vs)
        assert out.value == pytest.approx(best, abs=1e-7), trial
