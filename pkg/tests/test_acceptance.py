"""Acceptance criteria, one test per criterion; each prints a PASS/FAIL line."""

import math
import time

import numpy as np
import pytest

from abreu_lab.cli import main
from abreu_lab.estimates import Case, thm51_at, verify_thm_3_1
from abreu_lab.funcspec import parse_expr
from abreu_lab.geometry import (expr_potential, guillemin_potential, invariant_j, invariant_phi,
                                invariant_theta, legendre_roundtrip_error)
from abreu_lab.grid import build_grid, sample
from abreu_lab.operator import OperatorContext, equivalence_report, s_d_xi
from abreu_lab.polytope import centered_square, standard_simplex, unit_square
from abreu_lab.solver import (SolveConfig, jacobian_check, manufactured_problem, newton_solve,
                              recovery_error)

PSI_STAR = "0.05*xi1*xi2*(1-xi1)*(1-xi2)"
QUAD = "(xi1^2 + xi2^2)/2"


def test_criterion_1_closed_form_scalar_curvature(verdict):
    t0 = time.perf_counter()
    errs = {}
    for name, p, exact in (("square", unit_square(), 4.0), ("simplex", standard_simplex(), 6.0)):
        g = build_grid(p, 1 / 128)
        s = s_d_xi(OperatorContext(guillemin_potential(p, g))).restrict(4)
        errs[name] = float(np.max(np.abs(s.vector() - exact)))
    dt = time.perf_counter() - t0
    ok = max(errs.values()) <= 1e-3 and dt < 10
    verdict("1 closed-form scalar curvature", ok,
            f"err square={errs['square']:.2e} simplex={errs['simplex']:.2e}, {dt:.1f}s")


def test_criterion_2_form_equivalence(verdict):
    t0 = time.perf_counter()
    orders = {}
    for pname, p in (("square", unit_square()), ("simplex", standard_simplex())):
        for D in ("1", "exp(xi1)", "1 + xi1*xi2/4"):
            rep = equivalence_report(p, D, [1 / 32, 1 / 64, 1 / 128])
            d = [r.max_discrepancy for r in rep.rows]
            decreasing = all(b < a for a, b in zip(d, d[1:]))
            orders[(pname, D)] = rep.fitted_order if decreasing else -math.inf
    dt = time.perf_counter() - t0
    worst = min(orders.values())
    verdict("2 four-form equivalence", worst >= 1.8 and dt < 60,
            f"min fitted order {worst:.2f}, {dt:.1f}s")


def test_criterion_3_legendre_involution(verdict):
    h = 1 / 64
    ratios = []
    for p in (unit_square(), standard_simplex()):
        g = build_grid(p, h)
        ratios.append(legendre_roundtrip_error(guillemin_potential(p, g)) / h**2)
        for e in ("exp(xi1 + xi2/2) + xi1^2", QUAD + " + 0.3*xi1^3 + 0.2*xi2^4"):
            ratios.append(legendre_roundtrip_error(expr_potential(p, g, parse_expr(e))) / h**2)
    verdict("3 Legendre involution", max(ratios) <= 20, f"max error/h^2 = {max(ratios):.2f}")


def test_criterion_4_invariant_identities(verdict):
    sq = unit_square()
    checks = []
    for psi in (None, PSI_STAR):
        u = Case(sq, psi=psi).potential(1 / 32)
        phi, j, theta = invariant_phi(u), invariant_j(u), invariant_theta(u)
        m = theta.valid
        checks.append(np.array_equal(theta.values[m], j.values[m] + phi.values[m]))
        checks.append(bool(np.all(phi.vector() >= 0) and np.all(j.vector() >= 0)))
    box = centered_square(0.5)
    gb = build_grid(box, 1 / 32)
    quad_theta = invariant_theta(expr_potential(box, gb, parse_expr(QUAD))).max_abs()
    eps = 1e-2
    jv = invariant_j(expr_potential(box, gb, parse_expr(f"{QUAD} + {eps!r}*xi1^3")))
    j0 = jv.values[gb.node_of((0.0, 0.0))]
    rel = abs(j0 / (4.5 * eps**2) - 1)
    ok = all(checks) and quad_theta <= 1e-10 and rel <= 0.05
    verdict("4 invariant identities", ok,
            f"quadratic theta {quad_theta:.1e}, J rel. error {rel:.1e}")


def test_criterion_5_jacobian_consistency(verdict):
    p = unit_square()
    g = build_grid(p, 1 / 32)
    ctx = OperatorContext(guillemin_potential(p, g), D="1 + xi1*xi2/4", A="4")
    errs = jacobian_check(sample(parse_expr(PSI_STAR), g), ctx, n=20, seed=0)
    verdict("5 Jacobian consistency", len(errs) == 20 and errs.max() <= 1e-4,
            f"max relative error {errs.max():.1e}")


def test_criterion_6_manufactured_recovery(verdict):
    p = unit_square()
    parts = []
    ok = True
    for h in (1 / 32, 1 / 64):
        t0 = time.perf_counter()
        ctx = OperatorContext(guillemin_potential(p, build_grid(p, h)))
        A, psi_star = manufactured_problem(PSI_STAR, ctx)
        res = newton_solve(OperatorContext(ctx.u, A=A), SolveConfig(tol=1e-10))
        err = recovery_error(res.psi, psi_star)
        dt = time.perf_counter() - t0
        ok &= res.converged and res.final_residual <= 1e-8 and err <= 50 * h**2 and dt < 300
        parts.append(f"h={h:g}: err/h^2={err / h**2:.2f} res={res.final_residual:.1e}")
    verdict("6 manufactured recovery", ok, "; ".join(parts))


def test_criterion_7_determinant_ratio_growth(verdict):
    rep = verify_thm_3_1(Case(unit_square()), [1 / 32, 1 / 64])
    slopes_ok = all(r.sup <= 2 * r.extras["R"] + 1.5 for r in rep.rows)
    slack = min(d["slack"] for r in rep.rows for d in r.extras["per_t"].values())
    worst = max(r.sup for r in rep.rows)
    verdict("7 determinant-ratio growth slope and slack", slopes_ok and slack >= 0,
            f"max slope {worst:.2f} vs bound {2 * rep.rows[-1].extras['R'] + 1.5:.2f}, "
            f"min slack {slack:.2f}")


def test_criterion_8_edge_curvature_bounded(verdict):
    p = unit_square()
    sups = {"guillemin": [], "manufactured": []}
    for h in (1 / 64, 1 / 128):
        u = guillemin_potential(p, build_grid(p, h))
        sups["guillemin"].append(thm51_at(u, 0)["sup"])
        A, _ = manufactured_problem(PSI_STAR, OperatorContext(u))
        res = newton_solve(OperatorContext(u, A=A), SolveConfig(tol=1e-10))
        assert res.converged
        sups["manufactured"].append(thm51_at(u.with_psi(res.psi), 0)["sup"])
    drift = {k: abs(v[1] - v[0]) / abs(v[0]) for k, v in sups.items()}
    verdict("8 edge curvature boundedness", max(drift.values()) <= 0.10,
            ", ".join(f"{k} drift {d:.2%}" for k, d in drift.items()))


def test_criterion_9_deterministic_ledgers(verdict, tmp_path, capsys):
    (tmp_path / "square.txt").write_text("1 0 0\n-1 0 -1\n0 1 0\n0 -1 -1\n")
    cfg = tmp_path / "run.toml"
    cfg.write_text('[problem]\npolytope = "square.txt"\nh = [0.03125, 0.015625]\n')
    codes = [main(["verify", "--config", str(cfg), "--out", str(tmp_path / d), "--seed", "7"])
             for d in ("a", "b")]
    capsys.readouterr()
    same = (tmp_path / "a" / "ledger.csv").read_bytes() == (tmp_path / "b" / "ledger.csv").read_bytes()
    verdict("9 deterministic ledgers", same and codes == [0, 0], f"exit codes {codes}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
