import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wgnet.quadrature import (composite_edge_rule, edge_rule, fan_triangles, monomial_moment_table,
                              neural_rule, polygon_rule, signed_area, triangle_rule)

UNIT_TRI = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
UNIT_SQ = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
LSHAPE = np.array([[-1, -1], [0, -1], [0, 0], [1, 0], [1, 1], [-1, 1]], dtype=float)


def test_edge_midpoint_rule():
    r = edge_rule(np.array([[0.0, 0.0], [1.0, 0.0]]), 1)
    assert len(r) == 1
    assert np.allclose(r.points, [[0.5, 0.0]])
    assert r.weights[0] == pytest.approx(1.0)


def test_edge_constant_gives_length():
    e = np.array([[0.3, -1.0], [2.0, 4.0]])
    r = edge_rule(e, 4)
    assert r.integrate(lambda p: np.ones(len(p))) == pytest.approx(np.hypot(1.7, 5.0), rel=1e-14)


def test_edge_cubic():
    r = edge_rule(np.array([[0.0, 0.0], [1.0, 0.0]]), 3)
    assert r.integrate(lambda p: p[:, 0] ** 3) == pytest.approx(0.25, rel=1e-14)


def test_composite_edge_rule_matches_single():
    e = np.array([[0.0, 1.0], [2.0, 3.0]])
    f = lambda p: np.sin(p[:, 0]) * p[:, 1] ** 2
    exact = composite_edge_rule(e, 16, 12).integrate(f)
    assert composite_edge_rule(e, 2, 10).integrate(f) == pytest.approx(exact, rel=1e-10)


def test_triangle_examples():
    assert triangle_rule(UNIT_TRI, 0).integrate(lambda p: np.ones(len(p))) == pytest.approx(0.5)
    assert triangle_rule(UNIT_TRI, 2).integrate(lambda p: p[:, 0] * p[:, 1]) == pytest.approx(1 / 24, rel=1e-14)
    assert triangle_rule(UNIT_TRI, 2).integrate(lambda p: p[:, 0] ** 2) == pytest.approx(1 / 12, rel=1e-14)


def test_triangle_rule_positive_weights():
    for d in range(0, 15):
        r = triangle_rule(UNIT_TRI, d)
        assert np.all(r.weights > 0)
        assert r.exactness_degree >= d


def test_degenerate_triangle_rejected():
    with pytest.raises(ValueError, match="degenerate triangle"):
        triangle_rule(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]), 2)


def test_polygon_examples():
    assert polygon_rule(UNIT_SQ, 0).integrate(lambda p: np.ones(len(p))) == pytest.approx(1.0)
    assert polygon_rule(UNIT_SQ, 4).integrate(lambda p: p[:, 0] ** 2 * p[:, 1] ** 2) == pytest.approx(1 / 9, rel=1e-14)
    assert polygon_rule(LSHAPE, 0).integrate(lambda p: np.ones(len(p))) == pytest.approx(3.0, rel=1e-14)


def test_nonconvex_polygon_fan_covers_area():
    tris = fan_triangles(LSHAPE)
    assert sum(signed_area(t) for t in tris) == pytest.approx(3.0)
    assert all(signed_area(t) > 0 for t in tris)


def test_self_intersecting_polygon_rejected():
    bowtie = np.array([[0, 0], [1, 1], [1, 0], [0, 1]], dtype=float)
    with pytest.raises(ValueError, match="self-intersecting"):
        polygon_rule(bowtie, 2)


def test_neural_rule_sine_product():
    f = lambda p: np.sin(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1])
    val = neural_rule(UNIT_SQ, 2, 10).integrate(f)
    assert abs(val - 4 / np.pi**2) / (4 / np.pi**2) <= 1e-8


def test_neural_rule_refinement_monotone():
    # a smooth integrand that a low degree rule cannot integrate exactly
    f = lambda p: np.exp(3 * p[:, 0]) * np.cos(4 * p[:, 1])
    exact = (np.exp(3) - 1) / 3 * np.sin(4) / 4
    errs = [abs(neural_rule(UNIT_SQ, s, 3).integrate(f) - exact) for s in (1, 2, 4)]
    assert errs[0] > errs[1] > errs[2]


def test_monomial_table_exact():
    rows = monomial_moment_table(12)
    assert {r[0] for r in rows} == {"triangle", "square", "interval"}
    assert max(r[3] for r in rows) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 8), st.integers(0, 8),
       st.lists(st.floats(-3, 3), min_size=6, max_size=6))
def test_triangle_monomials_affine_invariance(a, b, coords):
    tri = np.array(coords).reshape(3, 2)
    area = signed_area(tri)
    if abs(area) < 1e-2:
        return
    if area < 0:
        tri = tri[[0, 2, 1]]
    deg = a + b
    lo = triangle_rule(tri, deg).integrate(lambda p: p[:, 0] ** a * p[:, 1] ** b)
    hi = polygon_rule(tri, deg + 6).integrate(lambda p: p[:, 0] ** a * p[:, 1] ** b)
    scale = max(1.0, abs(hi))
    assert abs(lo - hi) <= 1e-11 * scale


@pytest.mark.parametrize("deg", [0, 1, 5, 9])
def test_reference_moments(deg):
    # int over the unit triangle of x^a y^b = a! b! / (a + b + 2)!
    r = triangle_rule(UNIT_TRI, deg)
    for a in range(deg + 1):
        b = deg - a
        exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
        assert r.integrate(lambda p: p[:, 0] ** a * p[:, 1] ** b) == pytest.approx(exact, rel=1e-13)
