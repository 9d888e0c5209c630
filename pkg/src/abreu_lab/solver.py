"""Damped Newton solver for ``S_D(base + psi) = A`` in the smooth part ``psi``.

The unknowns are the values of ``psi`` on nodes of band ``>= 3``.  The two
outer bands form a collar where ``psi`` keeps its initial value; the
closed-form base carries the boundary behaviour.  The residual is the
``s_d_xi`` form on the same node set, so the Newton system is square.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .funcspec import Expr, parse_expr
from .geometry import ConvexityError, PotentialData, check_convex, hessian_bundle
from .grid import ScalarField, sample, stencil_matrix
from .operator import OperatorContext, form_discrepancies, s_d_xi

COLLAR = 2
UNKNOWN_BAND = COLLAR + 1


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolveConfig:
    tol: float = 1e-8
    max_iter: int = 30
    max_halvings: int = 20
    stall_iters: int = 5
    anchor: tuple | None = None
    continuation_steps: int = 0

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iter < 1 or self.max_halvings < 0 or self.continuation_steps < 0:
            raise ValueError("iteration counts must be non-negative")


@dataclass(frozen=True, eq=False)
class SolveResult:
    psi: ScalarField
    residuals: list
    iterations: int
    converged: bool
    message: str = ""
    discrepancies: dict = field(default_factory=dict)

    @property
    def final_residual(self) -> float:
        return self.residuals[-1]


def default_anchor(grid) -> tuple:
    """First node (row-major) of maximal band."""
    idx = np.argwhere(grid.band == grid.max_band)[0]
    return (int(idx[0]), int(idx[1]))


def _check_anchor(grid, anchor):
    if grid.band[anchor] != grid.max_band:
        raise ValueError(f"anchor {anchor} is not a node of maximal band {grid.max_band}")


def gauge_project(psi: ScalarField, anchor) -> ScalarField:
    """Subtract the least-squares affine fit of ``psi`` (centred at ``anchor``).

    Affine functions are annihilated by every second difference, so the
    residual is unchanged.
    """
    mask = psi.valid
    pts = psi.grid.points[mask] - psi.grid.point_of(anchor)
    basis = np.column_stack([np.ones(len(pts)), pts])
    coef, *_ = np.linalg.lstsq(basis, psi.values[mask], rcond=None)
    vals = psi.values.copy()
    allpts = psi.grid.points - psi.grid.point_of(anchor)
    vals -= coef[0] + allpts @ coef[1:]
    return ScalarField(psi.grid, np.where(mask, vals, np.nan), psi.band)


def _ctx_for(ctx: OperatorContext, psi: ScalarField) -> OperatorContext:
    return ctx.with_u(ctx.u.with_psi(psi))


def residual(psi: ScalarField, ctx: OperatorContext, A: ScalarField | None = None) -> ScalarField:
    """``s_d_xi(base + psi) - A`` on nodes of band ``>= 3``."""
    c = _ctx_for(ctx, psi)
    A = ctx.a_field() if A is None else A
    s = s_d_xi(c).restrict(UNKNOWN_BAND)
    return s - A


def _unknown_columns(grid):
    """Positions of the unknown nodes inside the band-1 node ordering."""
    all_idx = grid.flat_index(1)
    unk = grid.flat_index(UNKNOWN_BAND)
    return np.searchsorted(all_idx, unk)


def linearize(psi: ScalarField, ctx: OperatorContext) -> sp.csr_matrix:
    """Exact Jacobian of :func:`residual` with respect to ``psi`` on the unknown nodes.

    ``d(u^{ij}) = -u^{ia} d(u_ab) u^{bj}`` with ``d(u_ab)`` the second-difference
    matrices applied to the perturbation; the outer second differences of
    ``D u^{ij}`` are applied once more.
    """
    c = _ctx_for(ctx, psi)
    grid = c.grid
    hb = hessian_bundle(c.u)
    d, _, _ = c.d_jet()
    hb_band = hb.band
    cols = _unknown_columns(grid)
    inner = {a: stencil_matrix(grid, a, 1, hb_band)[:, cols] for a in [(2, 0), (1, 1), (0, 2)]}
    m2 = grid.mask(hb_band)
    inv = hb.inv[m2]
    d2 = d[m2]
    pairs = {(0, 0): (2, 0), (0, 1): (1, 1), (1, 1): (0, 2)}
    m3 = grid.mask(UNKNOWN_BAND)
    total = None
    for (i, j), outer_alpha in pairs.items():
        # d(u^{ij}) as a sparse matrix acting on the unknowns
        coef = {
            (2, 0): inv[:, i, 0] * inv[:, 0, j],
            (1, 1): inv[:, i, 0] * inv[:, 1, j] + inv[:, i, 1] * inv[:, 0, j],
            (0, 2): inv[:, i, 1] * inv[:, 1, j],
        }
        du = -sum(sp.diags(coef[a] * d2) @ inner[a] for a in inner)
        outer = stencil_matrix(grid, outer_alpha, hb_band, UNKNOWN_BAND)
        term = outer @ du
        if i != j:
            term = 2.0 * term
        total = term if total is None else total + term
    return (-sp.diags(1.0 / d[m3]) @ total).tocsr()


def jacobian_check(psi: ScalarField, ctx: OperatorContext, n: int = 20, t: float = 1e-6,
                   seed: int = 0) -> np.ndarray:
    """Relative errors of ``J delta`` against central Gateaux differences of the residual.

    Perturbations are random products of low sine modes on the unknown nodes,
    scaled to unit max-norm.
    """
    rng = np.random.default_rng(seed)
    J = linearize(psi, ctx)
    pts = psi.grid.points[psi.grid.mask(UNKNOWN_BAND)]
    errs = np.empty(n)
    for k in range(n):
        a, b = rng.integers(1, 5, size=2)
        ph = rng.uniform(0.0, 2 * np.pi, size=2)
        delta = np.sin(np.pi * a * pts[:, 0] + ph[0]) * np.sin(np.pi * b * pts[:, 1] + ph[1])
        delta /= np.max(np.abs(delta))
        rp = residual(_apply_step(psi, t * delta), ctx).vector()
        rm = residual(_apply_step(psi, -t * delta), ctx).vector()
        fd = (rp - rm) / (2 * t)
        jd = J @ delta
        errs[k] = np.linalg.norm(fd - jd) / np.linalg.norm(jd)
    return errs


def _apply_step(psi: ScalarField, step: np.ndarray) -> ScalarField:
    vals = psi.values.copy()
    mask = psi.grid.mask(UNKNOWN_BAND)
    vals[mask] += step
    return ScalarField(psi.grid, vals, psi.band)


def _newton(ctx, psi, A, cfg, anchor, history):
    r = residual(psi, ctx, A).vector()
    rn = float(np.max(np.abs(r)))
    history.append(rn)
    best = rn
    since_best = 0
    for it in range(1, cfg.max_iter + 1):
        if rn <= cfg.tol:
            return psi, it - 1, True, "converged"
        J = linearize(psi, ctx)
        try:
            delta = spsolve(J.tocsc(), -r)
        except RuntimeError as exc:  # singular factor
            raise SolverError(f"linear solve failed: {exc}") from exc
        if not np.all(np.isfinite(delta)):
            raise SolverError("linear solve produced non-finite values")
        lam = 1.0
        accepted = False
        saw_convex = False
        for _ in range(cfg.max_halvings + 1):
            trial = _apply_step(psi, lam * delta)
            try:
                check_convex(ctx.u.with_psi(trial))
                saw_convex = True
                rt = residual(trial, ctx, A).vector()
            except ConvexityError:
                lam *= 0.5
                continue
            rtn = float(np.max(np.abs(rt)))
            if rtn <= (1.0 - lam / 4.0) * rn or rtn <= cfg.tol:
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            if not saw_convex:
                return psi, it, False, "convexity lost at full damping"
            return psi, it, False, "line search failed"
        psi = gauge_project(trial, anchor)
        r, rn = rt, rtn
        history.append(rn)
        if rn < best * (1 - 1e-12):
            best, since_best = rn, 0
        else:
            since_best += 1
            if since_best >= cfg.stall_iters:
                return psi, it, False, "residual stalled"
    return psi, cfg.max_iter, rn <= cfg.tol, "converged" if rn <= cfg.tol else "iteration limit"


def newton_solve(ctx: OperatorContext, cfg: SolveConfig = SolveConfig(),
                 psi0: ScalarField | None = None) -> SolveResult:
    """Solve ``S_D(base + psi) = A`` by damped Newton with optional continuation in ``A``."""
    grid = ctx.grid
    ctx.d_jet()  # positivity of D
    anchor = default_anchor(grid) if cfg.anchor is None else tuple(cfg.anchor)
    _check_anchor(grid, anchor)
    if psi0 is None:
        psi0 = ScalarField(grid, np.where(grid.interior, 0.0, np.nan), 1)
    A = ctx.a_field().restrict(UNKNOWN_BAND)
    try:
        hessian_bundle(ctx.u.with_psi(psi0))
    except ConvexityError as exc:
        raise SolverError(f"initial potential is not convex: {exc}") from exc
    history: list = []
    psi = psi0
    total_iters = 0
    steps = cfg.continuation_steps
    if steps > 0:
        A0 = s_d_xi(_ctx_for(ctx, psi0)).restrict(UNKNOWN_BAND)
        for k in range(1, steps):
            t = k / steps
            At = A0 * (1.0 - t) + A * t
            psi, its, ok, msg = _newton(ctx, psi, At, cfg, anchor, history)
            total_iters += its
            if not ok:
                return SolveResult(psi, history, total_iters, False, f"continuation t={t}: {msg}")
    psi, its, ok, msg = _newton(ctx, psi, A, cfg, anchor, history)
    total_iters += its
    disc = {}
    try:
        disc, _, _ = form_discrepancies(_ctx_for(ctx, psi))
    except (ValueError, ConvexityError):
        pass
    return SolveResult(psi, history, total_iters, ok, msg, disc)


def manufactured_problem(psi_star, ctx: OperatorContext):
    """Right-hand side ``A* = s_d_xi(base + psi*)`` and the sampled ``psi*``.

    ``psi_star`` is an expression or a vectorised callable of the points.
    """
    if isinstance(psi_star, str):
        psi_star = parse_expr(psi_star)
    psi = sample(psi_star, ctx.grid)
    c = _ctx_for(ctx, psi)
    try:
        hessian_bundle(c.u)
    except ConvexityError as exc:
        raise SolverError(f"manufactured potential is not convex: {exc}") from exc
    A = s_d_xi(c).restrict(UNKNOWN_BAND)
    return A, psi


def recovery_error(psi: ScalarField, psi_star: ScalarField, anchor=None) -> float:
    """Max-norm difference after projecting both fields to the same affine gauge."""
    anchor = default_anchor(psi.grid) if anchor is None else anchor
    a = gauge_project(psi, anchor)
    b = gauge_project(psi_star, anchor)
    return float(np.max(np.abs(a.vector() - b.vector())))


__all__ = ["SolveConfig", "SolveResult", "SolverError", "residual", "linearize", "newton_solve",
           "manufactured_problem", "jacobian_check", "gauge_project", "recovery_error", "default_anchor",
           "UNKNOWN_BAND", "Expr", "PotentialData"]
