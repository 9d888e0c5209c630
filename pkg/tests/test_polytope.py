import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from abreu_lab.polytope import (AffineMap, BoundaryError, PolytopeError, check_delzant,
                                euclidean_boundary_distance, guillemin_jet, make_polytope,
                                min_volume_ellipse, normalize_domain, parse_polytope,
                                sandwich_check)


def test_square_vertices_and_delzant(square):
    assert sorted(map(tuple, square.vertices.tolist())) == [(0, 0), (0, 1), (1, 0), (1, 1)]
    rep = check_delzant(square)
    assert rep.passed and all(abs(d) == 1 for d in rep.determinants)


def test_simplex_delzant_and_inradius(simplex):
    assert check_delzant(simplex).passed
    assert simplex.inradius() == pytest.approx(1 - 1 / math.sqrt(2), abs=1e-9)


def test_non_delzant_triangle_is_reported():
    p = make_polytope([((1, 0), 0.0), ((0, 1), 0.0), ((-1, -2), -2.0)])
    assert not check_delzant(p).passed


def test_parse_with_comments():
    p = parse_polytope("# square\n1 0 0\n-1 0 -1  # right\n0 1 0\n0 -1 -1\n")
    assert p.n_edges == 4
    assert parse_polytope(p.to_text()).offsets.tolist() == p.offsets.tolist()


@pytest.mark.parametrize("text", [
    "1 0 0\n0 1 0\n",                      # unbounded
    "1 0 0\n-1 0 -1\n0 1 0\n0 -1 -1\n1 1 -5\n",  # redundant edge
    "1 0 0\n-1 0 1\n0 1 0\n0 -1 -1\n",      # empty interior
    "1.5 0 0\n-1 0 -1\n0 1 0\n",            # non-integer normal
    "1 0\n",
])
def test_bad_polytopes_rejected(text):
    with pytest.raises(PolytopeError):
        parse_polytope(text)


def test_guillemin_square_center(square):
    jet = guillemin_jet(square, np.array([0.5, 0.5]), 4)
    assert jet.value == pytest.approx(-2 * math.log(2))
    np.testing.assert_allclose(jet.gradient, [0, 0], atol=1e-15)
    np.testing.assert_allclose(jet.hessian, 4 * np.eye(2))
    assert np.all(jet.third == 0)


def test_guillemin_simplex_hessian(simplex):
    jet = guillemin_jet(simplex, np.array([0.25, 0.25]), 2)
    # 1/xi_i on the diagonal plus 1/(1 - xi1 - xi2) everywhere
    np.testing.assert_allclose(jet.hessian, [[6, 2], [2, 6]])


def test_guillemin_outside_raises(square):
    with pytest.raises(BoundaryError):
        guillemin_jet(square, np.array([0.0, 0.5]))


@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_guillemin_derivatives_match_differences(x, y):
    from abreu_lab.polytope import unit_square

    p = unit_square()
    e = 1e-5
    xi = np.array([x, y])
    jet = guillemin_jet(p, xi, 4)
    for k in range(1, 5):
        lo = guillemin_jet(p, xi - [e, 0], 4).derivative(k - 1)
        hi = guillemin_jet(p, xi + [e, 0], 4).derivative(k - 1)
        fd = (hi - lo) / (2 * e)
        np.testing.assert_allclose(jet.derivative(k)[..., 0] if k > 1 else jet.derivative(k)[0],
                                   fd if k > 1 else fd, rtol=1e-5, atol=1e-5)


def test_boundary_distance(simplex):
    d = euclidean_boundary_distance(simplex, np.array([0.3, 0.5]))
    assert d == pytest.approx(0.2 / math.sqrt(2))


def test_affine_map_inverse_and_compose():
    a = AffineMap(np.array([[2.0, 1.0], [0.0, 1.0]]), np.array([1.0, -1.0]))
    x = np.array([[0.3, 0.7], [1.0, 2.0]])
    np.testing.assert_allclose(a.inverse()(a(x)), x)
    np.testing.assert_allclose(a.compose(a.inverse())(x), x)


def test_min_volume_ellipse_of_disk_samples():
    t = np.linspace(0, 2 * np.pi, 60, endpoint=False)
    pts = np.column_stack([5 + 3 * np.cos(t), 5 + 3 * np.sin(t)])
    c, m = min_volume_ellipse(pts, tol=1e-10)
    np.testing.assert_allclose(c, [5, 5], atol=1e-6)
    np.testing.assert_allclose(m, np.eye(2) / 9, rtol=1e-4, atol=1e-12)


@pytest.mark.parametrize("verts", [
    [[0, 0], [1, 0], [1, 1], [0, 1]],
    [[0, 0], [10, 0], [0, 0.3]],
    [[0, 0], [4, 0], [5, 2], [1, 3]],
])
def test_normalize_domain_sandwich(verts):
    t, image = normalize_domain(np.array(verts, dtype=float))
    assert sandwich_check(image)["passed"]
    # normalizing twice changes nothing relevant
    _, image2 = normalize_domain(image)
    assert sandwich_check(image2)["passed"]


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=3, max_size=9))
def test_normalize_random_convex_hulls(points):
    from scipy.spatial import ConvexHull, QhullError

    pts = np.array(points)
    try:
        hull = ConvexHull(pts)
    except (QhullError, ValueError):
        return
    if hull.volume < 1e-2:
        return
    _, image = normalize_domain(pts[hull.vertices])
    assert sandwich_check(image)["passed"]
