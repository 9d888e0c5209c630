import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from abreu_lab.funcspec import parse_expr
from abreu_lab.geometry import expr_potential, guillemin_potential
from abreu_lab.grid import build_grid, sample
from abreu_lab.operator import (FORMS, OperatorContext, OperatorError, abreu_operator,
                                divergence_defect, equivalence_report, fitted_order,
                                form_discrepancies, h_fields, interior_region, s_d_xi, u_cofactor)
from abreu_lab.polytope import centered_square

QUAD = "(xi1^2 + xi2^2)/2"
PSI = "0.05*xi1*xi2*(1-xi1)*(1-xi2) + 0.02*xi1^3"


def test_guillemin_square_scalar_curvature(square):
    g = build_grid(square, 1 / 64)
    ctx = OperatorContext(guillemin_potential(square, g))
    # u^{ij} is quadratic and the x form is closed-form: both exact
    for name in ("xi", "x"):
        np.testing.assert_allclose(FORMS[name](ctx).vector(), 4.0, atol=1e-8, err_msg=name)
    # the other two difference the singular F; compare away from the boundary
    region = interior_region(g, 0.25)
    for name in ("uf", "logf"):
        s = FORMS[name](ctx)
        assert np.max(np.abs(s.values[region] - 4.0)) <= 50 * g.h**2, name


def test_guillemin_simplex_scalar_curvature(simplex):
    g = build_grid(simplex, 1 / 64)
    s = s_d_xi(OperatorContext(guillemin_potential(simplex, g)))
    np.testing.assert_allclose(s.vector(), 6.0, atol=1e-8)


def test_quadratic_gives_zero(square, square_grid):
    ctx = OperatorContext(expr_potential(square, square_grid, parse_expr(QUAD)))
    for name, form in FORMS.items():
        assert form(ctx).max_abs() <= 1e-10, name


def test_exponential_weight_on_quadratic(square, square_grid):
    ctx = OperatorContext(expr_potential(square, square_grid, parse_expr(QUAD)), D="exp(xi1)")
    h = square_grid.h
    np.testing.assert_allclose(FORMS["x"](ctx).vector(), -1.0, atol=1e-12)
    for name in ("xi", "uf", "logf"):
        # second differences of exp(xi1) carry the truncation error h^2/12
        np.testing.assert_allclose(FORMS[name](ctx).vector(), -1.0, atol=h**2 / 12 * np.e + 1e-9,
                                   err_msg=name)


def test_unit_weight_matches_abreu_operator(square, square_grid):
    u = guillemin_potential(square, square_grid, sample(parse_expr(PSI), square_grid))
    a = s_d_xi(OperatorContext(u))
    b = abreu_operator(u)
    assert a.band == b.band
    np.testing.assert_allclose(a.vector(), b.vector(), rtol=1e-13, atol=1e-12)


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_affine_gauge_invariance(c0, c1, c2):
    from abreu_lab.polytope import unit_square

    p = unit_square()
    g = build_grid(p, 1 / 16)
    psi = sample(parse_expr(PSI), g)
    aff = sample(parse_expr(f"{c0!r} + {c1!r}*xi1 + {c2!r}*xi2"), g)
    ctx = OperatorContext(guillemin_potential(p, g, psi), D="1 + xi1*xi2/4")
    a = s_d_xi(ctx)
    b = s_d_xi(ctx.with_u(ctx.u.with_psi(psi + aff)))
    np.testing.assert_allclose(a.vector(), b.vector(), atol=1e-7)


def test_cofactor_symmetric_and_divergence_free(square):
    # centred differences commute, so the discrete divergence of the cofactor
    # of a difference Hessian vanishes up to rounding
    for h in (1 / 16, 1 / 32, 1 / 64):
        g = build_grid(square, h)
        ctx = OperatorContext(guillemin_potential(square, g, sample(parse_expr(PSI), g)))
        U = u_cofactor(ctx)
        m = g.interior
        np.testing.assert_array_equal(U[m][:, 0, 1], U[m][:, 1, 0])
        assert divergence_defect(ctx) <= 1e-9


def test_divergence_defect_reports_finite(square, square_grid):
    ctx = OperatorContext(guillemin_potential(square, square_grid))
    assert divergence_defect(ctx) <= 1e-8


def test_h_fields_identical_potentials(square, square_grid):
    u = guillemin_potential(square, square_grid)
    H, HD = h_fields(OperatorContext(u, reference=u))
    np.testing.assert_array_equal(H.vector(), 1.0)
    np.testing.assert_array_equal(HD.vector(), H.vector())


def test_h_fields_orientation():
    p = centered_square(0.5)
    g = build_grid(p, 1 / 16)
    f = expr_potential(p, g, parse_expr("xi1^2 + xi2^2"))
    ref = expr_potential(p, g, parse_expr(QUAD))
    H, _ = h_fields(OperatorContext(f, reference=ref))
    np.testing.assert_allclose(H.vector(), 4.0)


def test_h_fields_needs_reference(square, square_grid):
    with pytest.raises(OperatorError):
        h_fields(OperatorContext(guillemin_potential(square, square_grid)))


def test_h_fields_grid_mismatch(square):
    a = guillemin_potential(square, build_grid(square, 1 / 16))
    b = guillemin_potential(square, build_grid(square, 1 / 32))
    with pytest.raises(OperatorError):
        h_fields(OperatorContext(a, reference=b))


def test_nonpositive_weight_rejected(square, square_grid):
    ctx = OperatorContext(guillemin_potential(square, square_grid), D="xi1 - 0.5")
    with pytest.raises(OperatorError, match="positive"):
        s_d_xi(ctx)


def test_quadratic_equivalence_is_exact():
    p = centered_square(0.5)
    for h in (1 / 16, 1 / 32):
        g = build_grid(p, h)
        disc, _, _ = form_discrepancies(OperatorContext(expr_potential(p, g, parse_expr(QUAD))))
        assert max(disc.values()) <= 1e-10


@pytest.mark.parametrize("D", ["1", "exp(xi1)", "1 + xi1*xi2/4"])
def test_equivalence_converges_on_square(square, D):
    rep = equivalence_report(square, D, hs=[1 / 16, 1 / 32, 1 / 64], psi=PSI)
    assert rep.fitted_order >= 1.8
    d = [r.max_discrepancy for r in rep.rows]
    assert all(d[i] / d[i + 1] >= 3.0 for i in range(len(d) - 1))


def test_equivalence_csv_columns(square):
    rep = equivalence_report(square, "1", hs=[1 / 16, 1 / 32])
    lines = rep.to_csv("config=abc h=0.0625 band=4").splitlines()
    assert lines[0] == "# config=abc h=0.0625 band=4"
    assert lines[2] == "h,band,disc_xi_uf,disc_xi_logf,disc_xi_x,disc_max,fitted_order"
    assert len(lines) == 5
    assert lines[3].startswith("0.0625,")


def test_fitted_order_of_exact_powers():
    hs = [0.1, 0.05, 0.025]
    assert fitted_order(hs, [3 * h**2 for h in hs]) == pytest.approx(2.0)
    assert fitted_order(hs, [0.0, 0.0, 0.0]) == float("inf")
