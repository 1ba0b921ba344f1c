import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hdg_eigs.shape import (AffineTriangle, EdgeBasis, TriangleBasis, collapsed_triangle_rule,
                            edge_rule, flux_monomials, map_to_physical, triangle_rule)

DEGREES = range(1, 7)


def ref_monomial_integral(a, b):
    # int_T x^a y^b over the unit reference triangle
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


def random_poly(rng, degree):
    return [(a, b, rng.standard_normal()) for a in range(degree + 1) for b in range(degree + 1 - a)]


def quad(rule, poly):
    x, y = rule.points[:, 0], rule.points[:, 1]
    return sum(c * np.dot(rule.weights, x ** a * y ** b) for a, b, c in poly)


def exact(poly):
    return sum(c * ref_monomial_integral(a, b) for a, b, c in poly)


@pytest.mark.parametrize("degree", DEGREES)
def test_triangle_rule_exact_on_100_random_polynomials(degree):
    rng = np.random.default_rng(degree)
    rule = triangle_rule(degree)
    assert np.all(rule.weights > 0)
    inside = (rule.points >= -1e-15).all(1) & (rule.points.sum(1) <= 1 + 1e-15)
    assert inside.all()
    for _ in range(100):
        p = random_poly(rng, degree)
        assert abs(quad(rule, p) - exact(p)) <= 1e-13 * max(1.0, sum(abs(c) for *_, c in p))


@given(degree=st.integers(1, 6), seed=st.integers(0, 2 ** 32 - 1))
@settings(max_examples=60, deadline=None)
def test_triangle_rule_property(degree, seed):
    p = random_poly(np.random.default_rng(seed), degree)
    assert math.isclose(quad(triangle_rule(degree), p), exact(p), rel_tol=1e-12, abs_tol=1e-13)


@pytest.mark.parametrize("degree", [2, 6, 10, 14])
def test_collapsed_rule_exact(degree):
    rng = np.random.default_rng(100 + degree)
    rule = collapsed_triangle_rule(degree)
    for _ in range(20):
        p = random_poly(rng, degree)
        assert math.isclose(quad(rule, p), exact(p), rel_tol=1e-12, abs_tol=1e-13)


@pytest.mark.parametrize("degree", DEGREES)
def test_edge_rule_exact(degree):
    rule = edge_rule(degree)
    for a in range(degree + 1):
        assert math.isclose(np.dot(rule.weights, rule.points ** a), 1 / (a + 1), rel_tol=1e-14)


@pytest.mark.parametrize("degree", [0, 7])
def test_rule_degree_out_of_range(degree):
    with pytest.raises(ValueError):
        triangle_rule(degree)
    with pytest.raises(ValueError):
        edge_rule(degree)


def test_unit_square_integration_through_affine_map():
    # two triangles of the unit square; int x^a y^b = 1/((a+1)(b+1))
    coords = np.array([[[0, 0], [1, 0], [1, 1]], [[0, 0], [1, 1], [0, 1]]], float)
    geo = AffineTriangle(coords)
    rule = triangle_rule(6)
    X, W = geo.points(rule.points), geo.weights(rule)
    for a in range(4):
        for b in range(4 - a):
            val = np.sum(W * X[..., 0] ** a * X[..., 1] ** b)
            assert math.isclose(val, 1 / ((a + 1) * (b + 1)), rel_tol=1e-13)


@pytest.mark.parametrize("order", [0, 1, 2])
def test_lagrange_basis_nodal_and_partition_of_unity(order):
    B = TriangleBasis(order)
    np.testing.assert_allclose(B.eval(B.nodes), np.eye(B.dim), atol=1e-14)
    pts = collapsed_triangle_rule(4).points
    np.testing.assert_allclose(B.eval(pts).sum(1), 1.0, atol=1e-14)
    np.testing.assert_allclose(B.grad(pts).sum(1), 0.0, atol=1e-13)


@pytest.mark.parametrize("order", [1, 2])
def test_basis_gradient_matches_finite_differences(order):
    B = TriangleBasis(order)
    pts = np.array([[0.2, 0.3], [0.1, 0.6]])
    eps = 1e-6
    for d in range(2):
        e = np.zeros(2)
        e[d] = eps
        fd = (B.eval(pts + e) - B.eval(pts - e)) / (2 * eps)
        np.testing.assert_allclose(B.grad(pts)[..., d], fd, atol=1e-8)


@pytest.mark.parametrize("order", [1, 2])
def test_trace_of_scalar_basis_has_full_edge_rank(order):
    # restriction of P_k to one edge spans P_k(e): rank k + 1
    B = TriangleBasis(order)
    geo = AffineTriangle(np.array([[0, 0], [1, 0], [0, 1]], float))
    s = edge_rule(2 * order).points
    for i in range(3):
        vals = B.eval(geo.edge_ref_points(i, s))
        assert np.linalg.matrix_rank(vals, tol=1e-12) == order + 1
    assert EdgeBasis(order).eval(s).shape == (len(s), order + 1)


@pytest.mark.parametrize("order", [0, 1, 2])
def test_mapped_mass_matrix_scaling_and_conditioning(order):
    B = TriangleBasis(order)
    rule = triangle_rule(max(2 * order, 1))
    phi = B.eval(rule.points)
    for scale in (1.0, 1e-3):
        coords = scale * np.array([[0.3, 0.1], [1.2, 0.4], [0.5, 1.3]])
        d = map_to_physical(B, coords, rule.points, rule)
        Mk = np.einsum("tq,qi,qj->tij", d["weights"], phi, phi)[0]
        area = 0.5 * abs(np.linalg.det(np.array([coords[1] - coords[0], coords[2] - coords[0]])))
        assert math.isclose(Mk.sum(), area, rel_tol=1e-13)
        assert np.linalg.cond(Mk) < 100.0


def test_normals_are_outward_units():
    coords = np.array([[0.0, 0.0], [2.0, 0.0], [0.5, 1.5]])
    geo = AffineTriangle(coords)
    np.testing.assert_allclose(np.linalg.norm(geo.normals[0], axis=1), 1.0)
    mids = 0.5 * (coords[[1, 2, 0]] + coords[[2, 0, 1]])
    assert np.all(np.einsum("ij,ij->i", geo.normals[0], mids - geo.centroid[0]) > 0)
    # sum of |e| n_e over a closed polygon vanishes
    np.testing.assert_allclose((geo.edge_lengths[0][:, None] * geo.normals[0]).sum(0), 0.0, atol=1e-15)


def test_degenerate_triangle_rejected():
    with pytest.raises(ValueError):
        AffineTriangle(np.array([[0, 0], [1, 1], [2, 2]], float))


def test_flux_monomials_centered():
    pts = np.array([[[0.5, 0.5], [1.0, 0.5]]])
    vals, grads = flux_monomials(1, pts, np.array([[0.5, 0.5]]), np.array([0.5]))
    np.testing.assert_allclose(vals[0], [[1, 0, 0], [1, 1, 0]])
    np.testing.assert_allclose(grads[0], [[0, 0], [2, 0], [0, 2]])
    with pytest.raises(ValueError):
        flux_monomials(2, pts, np.array([[0.5, 0.5]]), np.array([0.5]))
