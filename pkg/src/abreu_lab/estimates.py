"""Numerical harness for a-priori estimates of solutions of ``S_D(u) = A``.

The constants in the estimates are existential, so what can be checked on a
grid is (a) that the estimated quantities stay bounded, measured as the drift
of their supremum under halving of ``h``, and (b) explicit pointwise
inequalities that do not involve unknown constants.  Every check produces an
:class:`EstimateReport` with one :class:`ReportRow` per grid spacing.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .funcspec import eval_jet_many, parse_expr
from .geometry import (ExprBase, GuilleminBase, PotentialData, geodesic_distance_field,
                       hessian_bundle, logdet_gradient, logdet_hessian, ricci_and_kappa)
from .grid import ScalarField, apply_stencil, build_grid, format_float, sample
from .operator import OperatorContext, equivalence_report, h_fields, s_d_xi
from .polytope import Polytope, edge_values, euclidean_boundary_distance, normalize_domain

DRIFT_TOL = 0.10
ORDER_MIN = 1.8


# ---------------------------------------------------------------- test cases

@dataclass(frozen=True)
class Case:
    """Potential ``base + psi`` on a polygon with weight ``D``.

    ``base`` is an expression text (``None`` selects the Guillemin potential)
    and ``psi`` an optional expression for the smooth part.
    """

    polytope: Polytope
    D: str = "1"
    psi: str | None = None
    base: str | None = None

    def potential(self, h: float) -> PotentialData:
        grid = build_grid(self.polytope, h)
        psi = None if self.psi is None else sample(parse_expr(self.psi), grid)
        base = GuilleminBase(self.polytope) if self.base is None else ExprBase(parse_expr(self.base))
        return PotentialData(self.polytope, grid, psi, base)


def _psi_values(u: PotentialData) -> np.ndarray:
    if u.psi is not None:
        return u.psi.values
    return np.where(u.grid.interior, 0.0, np.nan)


def _xi(grid, node):
    return [float(c) for c in grid.point_of(node)]


# ---------------------------------------------------------------- reports

@dataclass(frozen=True)
class ReportRow:
    h: float
    band: int
    sup: float
    node_xi: list
    bound: float
    margin: float
    drift: float
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EstimateReport:
    item: str
    quantity: str
    rows: list
    verdict: str
    constants: dict = field(default_factory=dict)
    notes: str = ""

    def to_dict(self) -> dict:
        return {
            "item": self.item,
            "quantity": self.quantity,
            "verdict": self.verdict,
            "constants": self.constants,
            "notes": self.notes,
            "rows": [asdict(r) for r in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True) + "\n"


LEDGER_COLUMNS = ["item", "h", "band", "sup", "xi1", "xi2", "bound", "margin", "drift", "verdict"]


def ledger_rows(report: EstimateReport) -> list[str]:
    out = []
    for r in report.rows:
        xi = r.node_xi if r.node_xi else [math.nan, math.nan]
        label = report.item + (f"/{r.extras['tag']}" if "tag" in r.extras else "")
        out.append(",".join([label, format_float(r.h), str(r.band), format_float(r.sup),
                             format_float(xi[0]), format_float(xi[1]), format_float(r.bound),
                             format_float(r.margin), format_float(r.drift), report.verdict]))
    return out


def ledger_csv(reports, header: str | None = None) -> str:
    buf = io.StringIO()
    if header:
        buf.write(f"# {header}\n")
    buf.write(",".join(LEDGER_COLUMNS) + "\n")
    for rep in reports:
        for line in ledger_rows(rep):
            buf.write(line + "\n")
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def drifts(values) -> list[float]:
    """Relative change of each value against its predecessor (0 for the first)."""
    out = [0.0]
    for a, b in zip(values[:-1], values[1:]):
        if a == b:
            out.append(0.0)
        elif a == 0 or not (math.isfinite(a) and math.isfinite(b)):
            out.append(math.inf)
        else:
            out.append(abs(b - a) / abs(a))
    return out


def _refinement_rows(hs, bands, sups, nodes, extras):
    """Rows whose bound is the previous supremum widened by the drift tolerance."""
    ds = drifts(sups)
    rows = []
    for k, h in enumerate(hs):
        bound = (1 + DRIFT_TOL) * sups[k - 1] if k > 0 else math.nan
        margin = bound / sups[k] if k > 0 and sups[k] != 0 else math.nan
        rows.append(ReportRow(float(h), int(bands[k]), float(sups[k]), nodes[k],
                              float(bound), float(margin), float(ds[k]), extras[k]))
    return rows, max(ds)


# ---------------------------------------------------------------- constants

@dataclass(frozen=True)
class ConstantsR:
    R_g: float
    D_max: float
    R: float
    diameter: float
    band: int


def constants_r(g: PotentialData, D="1", p: Polytope | None = None) -> ConstantsR:
    """``R_g``, ``max |grad log D|`` and ``R = max(R_g, D_max^2, diam^2)``.

    ``R_g = max |g^{ij} (log F)_{x^i x^j}| + |grad_x log F|^2`` with
    ``F = D / det(g_ij)``.  The x-derivatives are taken through the closed
    form ``d/dx^i = g^{ik} d/dxi_k`` so only derivatives of ``g`` up to order
    four enter; the gradient norm is Euclidean.
    """
    p = g.polytope if p is None else p
    D = parse_expr(D) if isinstance(D, str) else D
    hb = hessian_bundle(g)
    band = max(hb.band, g.band_of(4))
    mask = g.grid.mask(band)
    pts = g.grid.points[mask]
    val, grad, hess = eval_jet_many(D, pts, 2)
    gD = grad / val[:, None]
    hD = hess / val[:, None, None] - np.einsum("ni,nj->nij", gD, gD)
    inv = hb.inv[mask]
    third = g.derivative(3)[mask]
    fourth = g.derivative(4)[mask]
    gL = logdet_gradient(inv, third)
    hL = logdet_hessian(inv, third, fourth)
    gF = gD - gL
    hF = hD - hL
    lap = (np.einsum("nkl,nkl->n", inv, hF) - np.einsum("nk,nka,na->n", gF, inv, gL))
    gx = np.einsum("nik,nk->ni", inv, gF)
    r_g = float(np.max(np.abs(lap) + (gx**2).sum(1)))
    # |grad log D| over all nodes of the closure sample
    allpts = g.grid.points[g.grid.interior]
    v2, g2 = eval_jet_many(D, allpts, 1)
    d_max = float(np.max(np.linalg.norm(g2 / v2[:, None], axis=1)))
    diam = p.diameter
    return ConstantsR(r_g, d_max, max(r_g, d_max**2, diam**2), diam, band)


# ---------------------------------------------------------------- determinant-ratio growth

def edge_bump(polytope: Polytope):
    """Smooth bump ``prod_i l_i`` scaled to max 1 on the polygon."""
    verts = polytope.vertices
    # the max of a product of positive affine functions; a fine sample is enough for scaling
    s = np.linspace(0.0, 1.0, 201)
    lo, hi = verts.min(0), verts.max(0)
    xx, yy = np.meshgrid(lo[0] + s * (hi[0] - lo[0]), lo[1] + s * (hi[1] - lo[1]), indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], 1)
    l = edge_values(polytope, pts)
    prod = np.where(np.all(l > 0, 1), np.prod(l, 1), 0.0)
    scale = float(prod.max())

    def bump(points):
        return np.prod(edge_values(polytope, points), axis=-1) / scale

    return bump


def thm31_at(f: PotentialData, g: PotentialData, D="1", R: float | None = None) -> dict:
    """Pointwise quantities for one pair ``f = g + phi`` on one grid.

    At ``p*`` maximising ``exp(-(2R+1) phi) H`` the explicit inequality
    ``2(R+1) sqrt(H) <= 2(2R+1) + |A| + 3R`` is evaluated (dimension 2) with
    ``A = S_D(f)``; ``slack`` is right side minus left side.
    """
    if R is None:
        R = constants_r(g, D).R
    ctx = OperatorContext(f, D, reference=g)
    H, _ = h_fields(ctx)
    A = s_d_xi(ctx)
    phi = _psi_values(f) - _psi_values(g)
    osc_mask = f.grid.mask(2)
    osc = float(np.max(phi[osc_mask]) - np.min(phi[osc_mask]))
    band = max(H.band, A.band)
    mask = f.grid.mask(band)
    weight = np.where(mask, np.exp(-(2 * R + 1) * phi) * H.values, -np.inf)
    node = np.unravel_index(int(np.argmax(weight)), weight.shape)
    h_star = float(H.values[node])
    a_star = float(A.values[node])
    rhs = 2 * (2 * R + 1) + abs(a_star) + 3 * R
    lhs = 2 * (R + 1) * math.sqrt(h_star)
    sup_h = float(np.max(H.values[H.valid]))
    return {
        "sup_H": sup_h,
        "sup_node": _xi(f.grid, H.argmax()),
        "osc_phi": osc,
        "p_star": _xi(f.grid, node),
        "H_p_star": h_star,
        "A_p_star": a_star,
        "lhs": lhs,
        "rhs": rhs,
        "slack": rhs - lhs,
        "ratio": sup_h / math.exp((2 * R + 1) * osc),
        "band": band,
    }


def verify_thm_3_1(case: Case, hs, ts=(0.01, 0.02, 0.04), sign: float = -1.0) -> EstimateReport:
    """Slope of ``log sup H`` against ``osc phi_t`` for ``phi_t = sign * t * bump``.

    The default well (``sign = -1``) raises ``det`` in the interior so that
    ``sup H`` actually grows with ``t``.

    Passes when every slope is at most ``2R + 1.5``, every slack is
    non-negative and the ratio ``sup H / exp((2R+1) osc phi)`` at the largest
    ``t`` drifts by at most 10% per refinement.
    """
    bump = edge_bump(case.polytope)
    rows_data = []
    slopes = []
    slack_ok = True
    R_vals = []
    for h in hs:
        g = case.potential(h)
        R = constants_r(g, case.D).R
        R_vals.append(R)
        bump_vals = sample(bump, g.grid).values
        per_t = []
        for t in ts:
            f = g.with_psi(ScalarField(g.grid, _psi_values(g) + sign * t * bump_vals, 1))
            per_t.append(thm31_at(f, g, case.D, R))
        osc = np.array([d["osc_phi"] for d in per_t])
        logs = np.log([d["sup_H"] for d in per_t])
        slope = float(np.polyfit(osc, logs, 1)[0]) if len(ts) > 1 else math.nan
        slopes.append(slope)
        slack_ok &= all(d["slack"] >= 0 for d in per_t)
        rows_data.append((h, per_t, slope, R))
    ratios = [d[1][-1]["ratio"] for d in rows_data]
    ds = drifts(ratios)
    rows = []
    for k, (h, per_t, slope, R) in enumerate(rows_data):
        last = per_t[-1]
        bound = 2 * R + 1.5
        rows.append(ReportRow(float(h), int(last["band"]), float(slope), last["p_star"], bound,
                              bound / slope if slope > 0 else math.inf, ds[k],
                              {"R": R, "per_t": {repr(t): d for t, d in zip(ts, per_t)}}))
    ok = slack_ok and all(s <= 2 * R + 1.5 for s, R in zip(slopes, R_vals)) and max(ds) <= DRIFT_TOL
    return EstimateReport("thm31", "slope of log sup H against osc phi", rows,
                          "stable" if ok else "unstable",
                          {"R": R_vals[-1], "slope_bound": 2 * R_vals[-1] + 1.5,
                           "min_slack": min(d["slack"] for r in rows_data for d in r[1])})


# ---------------------------------------------------------------- sublevel estimates

@dataclass(frozen=True, eq=False)
class NodeData:
    """Pointwise data of a potential after an affine change ``xi' = R xi + o``.

    ``u`` keeps its values, ``x' = R^{-T} x`` and ``det`` picks up ``det(R)^{-2}``.
    """

    xi: np.ndarray  # (N, 2)
    u: np.ndarray
    x: np.ndarray
    det: np.ndarray
    nodes: np.ndarray  # (N, 2) grid indices
    outer: np.ndarray  # (N,) bool, outermost evaluable band
    grid: object


def node_data(u: PotentialData, normalize: bool = True) -> NodeData:
    hb = hessian_bundle(u)
    band = max(hb.band, u.band_of(1))
    mask = u.grid.mask(band)
    nodes = np.argwhere(mask)
    xi = u.grid.points[mask]
    x = u.derivative(1)[mask]
    det = hb.det[mask]
    if normalize:
        t, _ = normalize_domain(u.polytope.vertices)
        rinv = np.linalg.inv(t.matrix)
        xi = t(xi)
        x = x @ rinv
        det = det / np.linalg.det(t.matrix) ** 2
    outer = u.grid.band[mask] == band
    return NodeData(xi, u.derivative(0)[mask], x, det, nodes, outer, u.grid)


def _tangent_normalized(nd: NodeData):
    """Values and duals of ``u`` minus its tangent plane at the minimising node.

    Returns ``(u_n, x_n, f, k)`` with the minimiser ``k`` moved to the origin.
    """
    k = int(np.argmin(nd.u))
    if nd.outer[k]:
        raise ValueError("minimiser lies on the edge of the evaluable set")
    y = nd.xi - nd.xi[k]
    un = nd.u - nd.u[k] - y @ nd.x[k]
    xn = nd.x - nd.x[k]
    f = np.einsum("ni,ni->n", y, xn) - un
    return un, xn, f, k


def _node_xi(nd: NodeData, k) -> list:
    return _xi(nd.grid, tuple(nd.nodes[k]))


def _dual_f(nd: NodeData):
    """Dual values ``f = xi.x - u`` shifted to ``inf f = 0``."""
    f = np.einsum("ni,ni->n", nd.xi, nd.x) - nd.u
    return f - np.min(f)


def default_level(u: PotentialData) -> float:
    """Half the smallest shifted dual value on the outermost evaluable band."""
    nd = node_data(u)
    return 0.5 * float(np.min(_dual_f(nd)[nd.outer]))


def lem41_at(u: PotentialData, C: float) -> dict:
    nd = node_data(u)
    fv = _dual_f(nd)
    sel = fv < C
    band = max(u.band_of(1), u.band_of(2))
    if not np.any(sel):
        return {"sup": math.nan, "node": [], "band": band, "violated": True, "N1": math.nan}
    q = np.where(sel, np.exp(-4 * C / np.where(sel, C - fv, 1.0)) / nd.det, -np.inf)
    k = int(np.argmax(q))
    n1 = float(np.max(np.linalg.norm(nd.xi[sel], axis=1)))
    return {"sup": float(q[k]), "node": _node_xi(nd, k), "band": band,
            "violated": bool(np.any(sel & nd.outer)), "N1": n1, "n_nodes": int(sel.sum())}


def verify_lem_4_1(case: Case, hs, C: float | None = None) -> EstimateReport:
    """``sup exp(-4C/(C - f)) det(f_ij)`` over ``{f < C}`` under refinement.

    The data are mapped to the normalized domain first; ``det(f_ij) =
    1/det(u_ij)`` at corresponding points.  ``C`` defaults to
    :func:`default_level` on the coarsest grid and is then held fixed.
    ``N1 = sup |grad f| = sup |xi|`` over the set is reported.
    """
    us = [case.potential(h) for h in hs]
    C = default_level(us[0]) if C is None else float(C)
    data = [lem41_at(u, C) for u in us]
    rows, worst = _refinement_rows(hs, [d["band"] for d in data], [d["sup"] for d in data],
                                   [d["node"] for d in data],
                                   [{"N1": d["N1"]} for d in data])
    violated = any(d["violated"] for d in data)
    verdict = "violated" if violated else ("stable" if worst <= DRIFT_TOL else "unstable")
    return EstimateReport("lem41", "sup exp(-4C/(C-f)) det(f_ij)", rows, verdict,
                          {"C": C, "normalized": True})


def side_condition_d(x, f, b: float = 1.0) -> float:
    """Smallest ``d >= 1`` with ``|x|^2 / (d + f)^2 <= b``."""
    need = np.linalg.norm(x, axis=1) / math.sqrt(b) - f
    return float(max(1.0, np.max(need)))


def side_condition_b(x, f, d: float) -> float:
    """Smallest ``b`` with ``|x|^2 / (d + f)^2 <= b``."""
    return float(np.max((x**2).sum(1) / (d + f) ** 2))


def lem42_at(u: PotentialData, C: float, d: float | None = None, b: float = 1.0) -> dict:
    nd = node_data(u)
    un, x, f, _ = _tangent_normalized(nd)
    band = max(u.band_of(1), u.band_of(2))
    sel = un < C
    if not np.any(sel):
        return {"sup": math.nan, "node": [], "band": band, "violated": True, "d": math.nan,
                "b": math.nan}
    d = side_condition_d(x[sel], f[sel], b) if d is None else float(d)
    q = np.where(sel, np.exp(-4 * C / np.where(sel, C - un, 1.0)) * nd.det
                 / np.where(sel, d + f, 1.0) ** 4, -np.inf)
    k = int(np.argmax(q))
    return {"sup": float(q[k]), "node": _node_xi(nd, k), "band": band,
            "violated": bool(np.any(sel & nd.outer)), "d": d,
            "b": side_condition_b(x[sel], f[sel], d), "n_nodes": int(sel.sum())}


def verify_lem_4_2(case: Case, hs, C: float | None = None, b: float = 1.0) -> EstimateReport:
    """``sup exp(-4C/(C-u)) det(u_ij) / (d + f)^4`` over ``{u < C}`` under refinement.

    ``u`` lives on the normalized domain and is normalised at its minimising
    node (value and gradient zero there).  ``C`` and ``d`` are fixed on the
    coarsest grid (``d`` as the smallest admissible value for side bound
    ``b``); the effective side bound on each grid is reported.
    """
    us = [case.potential(h) for h in hs]
    if C is None:
        nd = node_data(us[0])
        un, _, _, _ = _tangent_normalized(nd)
        C = 0.5 * float(np.min(un[nd.outer]))
    first = lem42_at(us[0], C, None, b)
    d = first["d"]
    data = [first] + [lem42_at(u, C, d, b) for u in us[1:]]
    rows, worst = _refinement_rows(hs, [r["band"] for r in data], [r["sup"] for r in data],
                                   [r["node"] for r in data],
                                   [{"d": r["d"], "b": r["b"]} for r in data])
    violated = any(r["violated"] for r in data)
    verdict = "violated" if violated else ("stable" if worst <= DRIFT_TOL else "unstable")
    return EstimateReport("lem42", "sup exp(-4C/(C-u)) det(u_ij)/(d+f)^4", rows, verdict,
                          {"C": C, "d": d, "b": b, "normalized": True})


def lem43_at(u: PotentialData, d: float | None = None, b: float = 1.0) -> dict:
    nd = node_data(u, normalize=False)
    un, x, f, _ = _tangent_normalized(nd)
    d = side_condition_d(x, f, b) if d is None else float(d)
    dist = euclidean_boundary_distance(u.polytope, nd.xi)
    base = nd.det / (d + f) ** 4
    out = {"d": d, "b": side_condition_b(x, f, d), "band": max(u.band_of(1), u.band_of(2))}
    for name, q in (("over", base / dist**4), ("times", base * dist**4)):
        k = int(np.argmax(q))
        out[name] = (float(q[k]), _node_xi(nd, k))
    return out


def verify_lem_4_3(case: Case, hs, b: float = 1.0) -> EstimateReport:
    """``det(u_ij) / (d + f)^4`` against ``d_E^{+4}`` and ``d_E^{-4}``.

    ``u`` is normalised at its minimising node; ``d`` is fixed on the coarsest
    grid.  Both orientations are tracked under refinement and the verdict is
    stable when at least one of them is.  Potentials without the boundary
    behaviour of the Guillemin potential are flagged as outside the
    hypotheses.
    """
    us = [case.potential(h) for h in hs]
    first = lem43_at(us[0], None, b)
    data = [first] + [lem43_at(u, first["d"], b) for u in us[1:]]
    bands = [r["band"] for r in data]
    extras = [{"d": r["d"], "b": r["b"]} for r in data]
    rows_over, w_over = _refinement_rows(hs, bands, [r["over"][0] for r in data],
                                         [r["over"][1] for r in data],
                                         [dict(e, tag="over", orientation="det/((d+f)^4 dE^4)") for e in extras])
    rows_times, w_times = _refinement_rows(hs, bands, [r["times"][0] for r in data],
                                           [r["times"][1] for r in data],
                                           [dict(e, tag="times", orientation="det dE^4/(d+f)^4") for e in extras])
    stable = min(w_over, w_times) <= DRIFT_TOL
    return EstimateReport("lem43", "det(u_ij)/(d+f)^4 against dE^(+-4)", rows_over + rows_times,
                          "stable" if stable else "unstable",
                          {"b": b, "d": first["d"], "hypothesis": us[0].is_guillemin,
                           "stable_over": w_over <= DRIFT_TOL,
                           "stable_times": w_times <= DRIFT_TOL})


# ---------------------------------------------------------------- curvature near an edge

def half_ball_region(u: PotentialData, edge: int, band: int) -> np.ndarray:
    """Nodes of ``band >= band`` within ``|edge| / 4`` of the edge midpoint."""
    p = u.polytope
    a, b_ = p.edge_vertices[edge]
    pa, pb = p.vertices[a], p.vertices[b_]
    mid = 0.5 * (pa + pb)
    radius = 0.25 * float(np.linalg.norm(pb - pa))
    near = np.linalg.norm(u.grid.points - mid, axis=-1) <= radius
    return near & u.grid.mask(band)


def c3_norm(field: ScalarField, region: np.ndarray) -> float:
    """Max over ``region`` of all differences of order at most three."""
    best = 0.0
    for k in range(4):
        for a in range(k + 1):
            d = apply_stencil(field.values, (k - a, a), field.grid.h)
            vals = d[region]
            vals = vals[np.isfinite(vals)]
            if len(vals):
                best = max(best, float(np.max(np.abs(vals))))
    return best


def edge_h22(u: PotentialData, edge: int, samples: int = 64) -> float:
    """Minimum tangential second derivative of the base potential along an edge (interior 90%)."""
    p = u.polytope
    a, b_ = p.edge_vertices[edge]
    pa, pb = p.vertices[a], p.vertices[b_]
    t = pb - pa
    t = t / np.linalg.norm(t)
    nu = p.normals[edge] / np.linalg.norm(p.normals[edge])
    s = np.linspace(0.05, 0.95, samples)
    pts = pa + s[:, None] * (pb - pa) + 1e-9 * nu
    hess = u.base.derivatives(pts, 2)[2]
    return float(np.min(np.einsum("i,nij,j->n", t, hess, t)))


def thm51_at(u: PotentialData, edge: int, D="1") -> dict:
    if not 0 <= edge < u.polytope.n_edges:
        raise ValueError(f"{edge} is not an edge index")
    inv = ricci_and_kappa(u)
    total = inv.theta + inv.kappa
    dist = geodesic_distance_field(u, target=edge)
    prod = total * dist * dist
    region = half_ball_region(u, edge, prod.band)
    vals = np.where(region, prod.values, -np.inf)
    node = np.unravel_index(int(np.argmax(vals)), vals.shape)
    S = s_d_xi(OperatorContext(u, D))
    c3 = c3_norm(S, half_ball_region(u, edge, S.band))
    return {"sup": float(vals[node]), "node": _xi(u.grid, node), "band": prod.band,
            "C3_S": c3, "h22_min": edge_h22(u, edge), "kappa_partial": inv.kappa_partial}


def verify_thm_5_1(case: Case, hs, edge: int = 0) -> EstimateReport:
    """``sup (Theta + K) d_u(., edge)^2`` over the half ball at the edge midpoint.

    ``K`` is the Ricci-norm part.  ``||S_D(u)||_{C^3}`` on the region and the
    minimal tangential second derivative along the edge are reported.
    """
    data = [thm51_at(case.potential(h), edge, case.D) for h in hs]
    rows, worst = _refinement_rows(hs, [d["band"] for d in data], [d["sup"] for d in data],
                                   [d["node"] for d in data],
                                   [{"C3_S": d["C3_S"], "h22_min": d["h22_min"]} for d in data])
    return EstimateReport("thm51", "sup (Theta + |Ric|) d_u^2", rows,
                          "stable" if worst <= DRIFT_TOL else "unstable",
                          {"edge": edge, "kappa_partial": True})


# ---------------------------------------------------------------- form equivalence

def verify_lemma26(case: Case, hs) -> EstimateReport:
    rep = equivalence_report(case.polytope, case.D, hs, psi=case.psi,
                             base=None if case.base is None else ExprBase(parse_expr(case.base)))
    sups = [r.max_discrepancy for r in rep.rows]
    rows = []
    for r, dr in zip(rep.rows, drifts(sups)):
        rows.append(ReportRow(r.h, r.band, r.max_discrepancy, [], ORDER_MIN,
                              rep.fitted_order / ORDER_MIN, dr, dict(r.discrepancies)))
    ok = rep.fitted_order >= ORDER_MIN
    return EstimateReport("lemma26", "max pairwise discrepancy of the four forms", rows,
                          "stable" if ok else "unstable",
                          {"fitted_order": rep.fitted_order, "collar": rep.collar})


HARNESS = {
    "thm31": verify_thm_3_1,
    "lem41": verify_lem_4_1,
    "lem42": verify_lem_4_2,
    "lem43": verify_lem_4_3,
    "thm51": verify_thm_5_1,
    "lemma26": verify_lemma26,
}
