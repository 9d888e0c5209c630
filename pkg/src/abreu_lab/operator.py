"""The generalized Abreu operator ``S_D(u) = -(1/D) sum_ij d_i d_j (D u^{ij})``.

Four algebraically equivalent discretisations are provided.  They agree in
the continuum and differ only by truncation error, which makes their mutual
discrepancy a convergence diagnostic:

``s_d_xi``
    second differences of the field ``D u^{ij}``;
``s_d_uf``
    ``-(1/D) U^{ij} F_ij`` with ``F = D / det(u_ij)`` and ``U = det(u_ij) u^{ij}``;
``s_d_logf``
    ``-(u^{ij} (log F)_ij + u^{ij} (log F)_i (log F)_j)``;
``s_d_x``
    the Legendre-dual form written in ``x = grad u`` coordinates and pulled
    back by the chain rule, using the closed-form derivatives of ``log D``
    and of ``log det(u_ij)`` (no differences of ``F``).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .funcspec import Expr, FuncDomainError, eval_jet_many, parse_expr
from .grid import ScalarField, apply_stencil, build_grid, format_float, sample
from .geometry import PotentialData, hessian_bundle, logdet_gradient, logdet_hessian
from .polytope import Polytope, euclidean_boundary_distance


class OperatorError(ValueError):
    pass


def _as_expr(e) -> Expr:
    if isinstance(e, Expr):
        return e
    if isinstance(e, (int, float)):
        return parse_expr(repr(float(e)))
    return parse_expr(str(e))


@dataclass(frozen=True, eq=False)
class OperatorContext:
    """Potential, weight ``D`` and right-hand side ``A`` for one grid.

    ``A`` may be an expression or a precomputed :class:`ScalarField`;
    ``reference`` is the comparison potential for :func:`h_fields`.
    """

    u: PotentialData
    D: Expr = field(default_factory=lambda: parse_expr("1"))
    A: object = None
    reference: PotentialData | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "D", _as_expr(self.D))
        if self.A is not None and not isinstance(self.A, ScalarField):
            object.__setattr__(self, "A", _as_expr(self.A))

    @property
    def grid(self):
        return self.u.grid

    def with_u(self, u: PotentialData) -> OperatorContext:
        ctx = OperatorContext(u, self.D, self.A, self.reference)
        if "D" in self._cache:
            ctx._cache["D"] = self._cache["D"]
        return ctx

    def d_jet(self):
        """``D``, ``grad log D`` and ``hess log D`` on interior nodes (NaN elsewhere)."""
        if "D" not in self._cache:
            grid = self.grid
            mask = grid.interior
            val, grad, hess = eval_jet_many(self.D, grid.points[mask], 2)
            if not np.all(val > 0):
                bad = grid.points[mask][np.argmin(val)]
                raise OperatorError(f"D must be positive; D={val.min():.3e} at xi={tuple(bad)}")
            d = np.full(grid.shape, np.nan)
            gl = np.full(grid.shape + (2,), np.nan)
            hl = np.full(grid.shape + (2, 2), np.nan)
            d[mask] = val
            gl[mask] = grad / val[:, None]
            hl[mask] = hess / val[:, None, None] - np.einsum("ni,nj->nij", gl[mask], gl[mask])
            self._cache["D"] = (d, gl, hl)
        return self._cache["D"]

    def a_field(self) -> ScalarField:
        if self.A is None:
            raise OperatorError("no right-hand side A configured")
        if isinstance(self.A, ScalarField):
            return self.A
        return sample(self.A, self.grid)


def _out(ctx, values, band):
    mask = ctx.grid.mask(band)
    return ScalarField(ctx.grid, np.where(mask, values, np.nan), band)


def _second_sum(w, h):
    """``sum_ij d_i d_j w^{ij}`` for a symmetric ``(n1, n2, 2, 2)`` field."""
    return (apply_stencil(w[..., 0, 0], (2, 0), h)
            + 2.0 * apply_stencil(w[..., 0, 1], (1, 1), h)
            + apply_stencil(w[..., 1, 1], (0, 2), h))


def _hessian_fd(f, h):
    out = np.empty(f.shape + (2, 2))
    out[..., 0, 0] = apply_stencil(f, (2, 0), h)
    out[..., 1, 1] = apply_stencil(f, (0, 2), h)
    out[..., 0, 1] = out[..., 1, 0] = apply_stencil(f, (1, 1), h)
    return out


def _gradient_fd(f, h):
    return np.stack([apply_stencil(f, (1, 0), h), apply_stencil(f, (0, 1), h)], axis=-1)


def form_band(ctx, form: str) -> int:
    """Band on which a form is available."""
    hb_band = ctx.u.band_of(2)
    if form == "x":
        return max(hb_band, ctx.u.band_of(4))
    return hb_band + 1


def s_d_xi(ctx: OperatorContext) -> ScalarField:
    hb = hessian_bundle(ctx.u)
    d, _, _ = ctx.d_jet()
    w = d[..., None, None] * hb.inv
    val = -_second_sum(w, ctx.grid.h) / d
    return _out(ctx, val, form_band(ctx, "xi"))


def abreu_operator(u: PotentialData) -> ScalarField:
    """Unweighted Abreu scalar curvature ``-sum d_i d_j u^{ij}``."""
    hb = hessian_bundle(u)
    val = -_second_sum(hb.inv, u.grid.h)
    return ScalarField(u.grid, np.where(u.grid.mask(hb.band + 1), val, np.nan), hb.band + 1)


def f_field(ctx: OperatorContext) -> ScalarField:
    hb = hessian_bundle(ctx.u)
    d, _, _ = ctx.d_jet()
    return _out(ctx, d / hb.det, hb.band)


def u_cofactor(ctx: OperatorContext) -> np.ndarray:
    """``U^{ij} = det(u_kl) u^{ij}`` as a ``(n1, n2, 2, 2)`` array."""
    hb = hessian_bundle(ctx.u)
    return hb.det[..., None, None] * hb.inv


def s_d_uf(ctx: OperatorContext) -> ScalarField:
    d, _, _ = ctx.d_jet()
    F = f_field(ctx).values
    val = -np.einsum("...ij,...ij->...", u_cofactor(ctx), _hessian_fd(F, ctx.grid.h)) / d
    return _out(ctx, val, form_band(ctx, "uf"))


def s_d_logf(ctx: OperatorContext) -> ScalarField:
    hb = hessian_bundle(ctx.u)
    logF = np.log(f_field(ctx).values)
    g = _gradient_fd(logF, ctx.grid.h)
    hs = _hessian_fd(logF, ctx.grid.h)
    val = -(np.einsum("...ij,...ij->...", hb.inv, hs)
            + np.einsum("...ij,...i,...j->...", hb.inv, g, g))
    return _out(ctx, val, form_band(ctx, "logf"))


def s_d_x(ctx: OperatorContext) -> ScalarField:
    """Dual-coordinate form via ``d/dx^i = u^{ik} d/dxi_k``.

    With ``f^{ij} = u_ij`` one has ``f^{ij} d_{x^i} d_{x^j} F = u^{kl} F_kl - F_k u^{ka} L_a``
    where ``L = log det(u_ij)``, and ``f^{ij} d_{x^i} F d_{x^j} G = u^{kl} F_k G_l``.
    """
    hb = hessian_bundle(ctx.u)
    _, gD, hD = ctx.d_jet()
    third = ctx.u.derivative(3)
    fourth = ctx.u.derivative(4)
    gL = logdet_gradient(hb.inv, third)
    hL = logdet_hessian(hb.inv, third, fourth)
    gF = gD - gL
    hF = hD - hL
    val = -(np.einsum("...kl,...kl->...", hb.inv, hF)
            - np.einsum("...k,...ka,...a->...", gF, hb.inv, gL)
            + np.einsum("...kl,...k,...l->...", hb.inv, gF, gD))
    return _out(ctx, val, form_band(ctx, "x"))


FORMS = {"xi": s_d_xi, "uf": s_d_uf, "logf": s_d_logf, "x": s_d_x}


def residual_fields(ctx: OperatorContext) -> dict:
    return {name: fn(ctx) for name, fn in FORMS.items()}


def divergence_defect(ctx: OperatorContext, min_band: int | None = None) -> float:
    """``max_j |sum_i d_i U^{ij}|`` over nodes of ``band >= min_band``."""
    U = u_cofactor(ctx)
    h = ctx.grid.h
    band = hessian_bundle(ctx.u).band + 1 if min_band is None else min_band
    mask = ctx.grid.mask(band)
    div = np.stack([apply_stencil(U[..., 0, j], (1, 0), h) + apply_stencil(U[..., 1, j], (0, 1), h)
                    for j in range(2)], axis=-1)
    return float(np.max(np.abs(div[mask])))


def h_fields(ctx: OperatorContext):
    """``H = det(u_ij) / det(g_ij)`` and its ``D``-weighted twin at common moment coordinates.

    Both potentials are read at the same node; with a single ``D`` the weight
    ratio is one and the two fields coincide.
    """
    g = ctx.reference
    if g is None:
        raise OperatorError("h_fields needs a reference potential")
    if g.grid is not ctx.u.grid:
        if g.grid.h != ctx.u.grid.h or not np.array_equal(g.grid.band, ctx.u.grid.band):
            raise OperatorError("reference potential lives on a different grid")
    hf = hessian_bundle(ctx.u)
    hg = hessian_bundle(g)
    band = max(hf.band, hg.band)
    H = _out(ctx, hf.det / hg.det, band)
    return H, ScalarField(ctx.grid, H.values.copy(), band)


# ---------------------------------------------------------------- equivalence report

PAIRS = [("xi", "uf"), ("xi", "logf"), ("xi", "x"), ("uf", "logf"), ("uf", "x"), ("logf", "x")]


@dataclass(frozen=True)
class EquivalenceRow:
    h: float
    band: int
    n_nodes: int
    discrepancies: dict  # pair name -> max-norm

    @property
    def max_discrepancy(self) -> float:
        return max(self.discrepancies.values())


@dataclass(frozen=True)
class EquivalenceReport:
    rows: list
    collar: float
    fitted_order: float

    def to_csv(self, header: str | None = None) -> str:
        buf = io.StringIO()
        if header:
            buf.write(f"# {header}\n")
        buf.write(f"# region: nodes at Euclidean distance >= {format_float(self.collar)} from the boundary\n")
        buf.write("h,band,disc_xi_uf,disc_xi_logf,disc_xi_x,disc_max,fitted_order\n")
        for r in self.rows:
            d = r.discrepancies
            buf.write(",".join([format_float(r.h), str(r.band), format_float(d["xi-uf"]),
                                format_float(d["xi-logf"]), format_float(d["xi-x"]),
                                format_float(r.max_discrepancy), format_float(self.fitted_order)]))
            buf.write("\n")
        return buf.getvalue()


def fitted_order(hs, values) -> float:
    """Least-squares slope of ``log value`` against ``log h``."""
    hs = np.asarray(hs, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(hs) < 2:
        return float("nan")
    if np.all(values <= 1e-13):
        return float("inf")
    values = np.maximum(values, 1e-300)
    return float(np.polyfit(np.log(hs), np.log(values), 1)[0])


def form_discrepancies(ctx: OperatorContext, region: np.ndarray | None = None):
    """Pairwise max-norm differences of the four forms on their common band (and ``region``)."""
    fields = residual_fields(ctx)
    band = max(f.band for f in fields.values())
    mask = ctx.grid.mask(band)
    if region is not None:
        mask = mask & region
    if not np.any(mask):
        raise OperatorError("no node left in the comparison region")
    out = {}
    for a, b in PAIRS:
        out[f"{a}-{b}"] = float(np.max(np.abs(fields[a].values[mask] - fields[b].values[mask])))
    return out, band, int(mask.sum())


def interior_region(grid, collar: float) -> np.ndarray:
    pts = grid.points
    mask = grid.interior
    dist = np.zeros(grid.shape)
    dist[mask] = euclidean_boundary_distance(grid.polytope, pts[mask])
    return mask & (dist >= collar - 1e-12)


def equivalence_report(polytope: Polytope, D="1", hs=(1 / 32, 1 / 64, 1 / 128), psi=None,
                       base=None, collar: float | None = None) -> EquivalenceReport:
    """Discrepancies among the four forms under refinement.

    ``psi`` is an optional expression for the smooth part and ``base`` an
    optional closed-form base (Guillemin by default).  Discrepancies are
    measured on the fixed region of nodes at distance ``>= collar`` from the
    boundary (default ``4 max(hs)``) so that the fitted order reflects
    truncation error rather than the boundary layer of the log singularity.
    """
    hs = [float(h) for h in hs]
    collar = 4.0 * max(hs) if collar is None else float(collar)
    D = _as_expr(D)
    psi_expr = None if psi is None else _as_expr(psi)
    rows = []
    for h in hs:
        grid = build_grid(polytope, h)
        psi_field = None if psi_expr is None else sample(psi_expr, grid)
        u = PotentialData(polytope, grid, psi_field, base)
        ctx = OperatorContext(u, D)
        disc, band, n = form_discrepancies(ctx, interior_region(grid, collar))
        rows.append(EquivalenceRow(h, band, n, disc))
    order = fitted_order(hs, [r.max_discrepancy for r in rows])
    return EquivalenceReport(rows, collar, order)


__all__ = [
    "OperatorContext", "OperatorError", "s_d_xi", "s_d_uf", "s_d_logf", "s_d_x", "abreu_operator",
    "f_field", "u_cofactor", "residual_fields", "divergence_defect", "h_fields",
    "equivalence_report", "EquivalenceReport", "EquivalenceRow", "form_discrepancies",
    "fitted_order", "interior_region", "FuncDomainError",
]
