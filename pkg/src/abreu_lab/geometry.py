"""Symplectic potentials on a grid and the geometry of their Calabi metric.

A potential is ``u = base + psi`` where ``base`` has closed-form derivatives
(the Guillemin potential by default, or any parsed expression) and ``psi`` is
an optional grid function differentiated by central differences.  Keeping the
boundary singularity inside ``base`` is what makes quantities near the
polygon boundary computable at all.
"""

from __future__ import annotations

import heapq
import math
import warnings
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .funcspec import Expr, eval_jet_many
from .grid import Grid, ScalarField, apply_stencil, band_increment, fd_derivative
from .polytope import Polytope, edge_values, guillemin_jet


class ConvexityError(ValueError):
    """The Hessian of the potential is not positive definite somewhere."""

    def __init__(self, message, node=None, eigenvalue=None):
        super().__init__(message)
        self.node = node
        self.eigenvalue = eigenvalue


class SectionError(ValueError):
    pass


# ---------------------------------------------------------------- potentials

class GuilleminBase:
    def __init__(self, polytope: Polytope):
        self.polytope = polytope

    def derivatives(self, points, order):
        jet = guillemin_jet(self.polytope, points, order)
        return [jet.derivative(k) for k in range(order + 1)]

    def __repr__(self):
        return "GuilleminBase()"


class ExprBase:
    """Closed-form potential given by a parsed expression."""

    def __init__(self, expr: Expr):
        self.expr = expr

    def derivatives(self, points, order):
        return eval_jet_many(self.expr, points, order)

    def __repr__(self):
        return f"ExprBase({self.expr.text!r})"


@dataclass(frozen=True, eq=False)
class PotentialData:
    polytope: Polytope = field(repr=False)
    grid: Grid = field(repr=False)
    psi: ScalarField | None = None
    base: object = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.base is None:
            object.__setattr__(self, "base", GuilleminBase(self.polytope))

    @property
    def analytic(self) -> bool:
        return self.psi is None

    @property
    def is_guillemin(self) -> bool:
        return isinstance(self.base, GuilleminBase)

    def band_of(self, k: int) -> int:
        """Band on which the order-``k`` derivative tensor is available."""
        if self.psi is None:
            return 1
        return self.psi.band + band_increment((k, 0))

    def with_psi(self, psi: ScalarField | None) -> PotentialData:
        return PotentialData(self.polytope, self.grid, psi, self.base)

    def _base(self, order):
        key = ("base", order)
        if key not in self._cache:
            mask = self.grid.interior
            parts = self.base.derivatives(self.grid.points[mask], order)
            full = []
            for k, part in enumerate(parts):
                arr = np.full(self.grid.shape + (2,) * k, np.nan)
                arr[mask] = part
                full.append(arr)
            self._cache[key] = full
        return self._cache[key]

    def derivative(self, k: int) -> np.ndarray:
        """Order-``k`` derivative tensor of ``u`` as a ``(n1, n2, 2, ..., 2)`` array."""
        key = ("d", k)
        if key in self._cache:
            return self._cache[key]
        order = max(k, 3 if k <= 3 else 4)
        base = self._base(order)[k]
        if self.psi is None:
            out = base.copy()
        else:
            out = base + psi_derivative(self.psi, k)
        band = self.band_of(k)
        mask = self.grid.mask(band)
        out[~mask] = np.nan
        self._cache[key] = out
        return out

    def value(self) -> ScalarField:
        return ScalarField(self.grid, self.derivative(0), self.band_of(0))


def psi_derivative(psi: ScalarField, k: int) -> np.ndarray:
    """Symmetric tensor of all order-``k`` central differences of ``psi``."""
    if k == 0:
        return psi.values.copy()
    out = np.empty(psi.grid.shape + (2,) * k)
    cache = {}
    for idx in product((0, 1), repeat=k):
        alpha = (k - sum(idx), sum(idx))
        if alpha not in cache:
            cache[alpha] = apply_stencil(psi.values, alpha, psi.grid.h)
        out[(Ellipsis,) + idx] = cache[alpha]
    return out


def guillemin_potential(polytope: Polytope, grid: Grid, psi: ScalarField | None = None):
    return PotentialData(polytope, grid, psi, GuilleminBase(polytope))


def expr_potential(polytope: Polytope, grid: Grid, expr: Expr, psi: ScalarField | None = None):
    return PotentialData(polytope, grid, psi, ExprBase(expr))


# ---------------------------------------------------------------- Hessian bundle

@dataclass(frozen=True, eq=False)
class HessBundle:
    hess: np.ndarray  # (n1, n2, 2, 2)
    inv: np.ndarray
    det: np.ndarray
    logdet: np.ndarray
    band: int


def _inverse_2x2(m):
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    inv = np.empty_like(m)
    inv[..., 0, 0] = m[..., 1, 1] / det
    inv[..., 1, 1] = m[..., 0, 0] / det
    inv[..., 0, 1] = -m[..., 0, 1] / det
    inv[..., 1, 0] = -m[..., 1, 0] / det
    return inv, det


def min_eigenvalue(m):
    tr = m[..., 0, 0] + m[..., 1, 1]
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    disc = np.sqrt(np.maximum(tr**2 / 4 - det, 0.0))
    return tr / 2 - disc


def check_convex(u: PotentialData, hess: np.ndarray | None = None, band: int | None = None):
    hess = u.derivative(2) if hess is None else hess
    band = u.band_of(2) if band is None else band
    mask = u.grid.mask(band)
    lam = min_eigenvalue(hess)
    scale = np.abs(hess).max(axis=(-1, -2))
    bad = mask & ~(lam > 1e-10 * scale)
    if np.any(bad):
        vals = np.where(bad, lam / np.where(scale > 0, scale, 1), np.inf)
        node = np.unravel_index(int(np.argmin(vals)), vals.shape)
        raise ConvexityError(
            f"Hessian not positive definite at node {tuple(int(c) for c in node)} "
            f"xi={tuple(u.grid.point_of(node))}, smallest eigenvalue {lam[node]:.3e}",
            node=node, eigenvalue=float(lam[node]))


def hessian_bundle(u: PotentialData) -> HessBundle:
    if "hb" in u._cache:
        return u._cache["hb"]
    hess = u.derivative(2)
    band = u.band_of(2)
    check_convex(u, hess, band)
    inv, det = _inverse_2x2(hess)
    with np.errstate(invalid="ignore", divide="ignore"):
        logdet = np.log(det)
    hb = HessBundle(hess, inv, det, logdet, band)
    u._cache["hb"] = hb
    return hb


# ---------------------------------------------------------------- Legendre transform

def legendre_fields(u: PotentialData):
    """``x = grad u`` per node and the dual values ``f = xi . x - u`` (band of the gradient)."""
    x = u.derivative(1)
    band = u.band_of(1)
    xi = u.grid.points
    f = np.einsum("...i,...i->...", xi, x) - u.derivative(0)
    mask = u.grid.mask(band)
    f[~mask] = np.nan
    return x, ScalarField(u.grid, f, band)


def legendre_map(u: PotentialData, node):
    x, f = legendre_fields(u)
    if not u.grid.mask(f.band)[node]:
        raise ValueError(f"node {node} is outside band {f.band}")
    return x[node].copy(), float(f.values[node])


def discrete_legendre(points, values, query, chunk: int = 1024):
    """Convex conjugate ``max_m (p_m . q - values_m)`` over sample points.

    Returns ``(conjugate values, argmax index)``.
    """
    points = np.asarray(points, dtype=float)
    values = np.asarray(values, dtype=float)
    query = np.atleast_2d(np.asarray(query, dtype=float))
    out = np.empty(len(query))
    arg = np.empty(len(query), dtype=np.int64)
    for s in range(0, len(query), chunk):
        q = query[s:s + chunk]
        t = q @ points.T - values
        arg[s:s + chunk] = np.argmax(t, axis=1)
        out[s:s + chunk] = t[np.arange(len(q)), arg[s:s + chunk]]
    return out, arg


def legendre_roundtrip_error(u: PotentialData, at: str = "midpoints", min_band: int = 3):
    """Sup-norm error of the discrete double transform ``L(L(u))`` against ``u``.

    The dual values ``f`` on the image points ``x = grad u`` are conjugated
    back and compared with ``u`` either at the nodes themselves or at the
    centres of cells whose four corners have ``band >= min_band`` (where
    ``u`` is the base value plus bilinear ``psi``).
    """
    x, f = legendre_fields(u)
    mask = f.valid
    grid = u.grid
    if at == "nodes":
        q_mask = grid.mask(max(min_band, f.band))
        query = grid.points[q_mask]
        exact = u.derivative(0)[q_mask]
    elif at == "midpoints":
        m = grid.mask(max(min_band, f.band))
        cell = m[:-1, :-1] & m[1:, :-1] & m[:-1, 1:] & m[1:, 1:]
        query = grid.points[:-1, :-1][cell] + 0.5 * grid.h
        exact = u.base.derivatives(query, 0)[0]
        if u.psi is not None:
            pv = u.psi.values
            exact = exact + 0.25 * (pv[:-1, :-1] + pv[1:, :-1] + pv[:-1, 1:] + pv[1:, 1:])[cell]
    else:
        raise ValueError(f"unknown evaluation set {at!r}")
    back, _ = discrete_legendre(x[mask], f.values[mask], query)
    return float(np.max(np.abs(back - exact)))


# ---------------------------------------------------------------- invariants

def logdet_gradient(inv, third):
    """``d_k log det(u_ij) = u^{ab} u_{abk}``."""
    return np.einsum("...ab,...abk->...k", inv, third)


def logdet_hessian(inv, third, fourth):
    """``d_k d_l log det = u^{ab} u_{abkl} - u^{ac} u_{cdl} u^{db} u_{abk}``."""
    return (np.einsum("...ab,...abkl->...kl", inv, fourth)
            - np.einsum("...ac,...cdl,...db,...abk->...kl", inv, third, inv, third))


def phi_from_tensors(inv, third):
    g = logdet_gradient(inv, third)
    return np.einsum("...ij,...i,...j->...", inv, g, g) / 16.0


def j_from_tensors(inv, third):
    c = np.einsum("...il,...jm,...kn,...ijk,...lmn->...", inv, inv, inv, third, third)
    return c / 8.0


def ricci_from_tensors(inv, third, fourth):
    """Ricci tensor pulled back to moment coordinates: ``Ł_kl - u_klb u^{bc} Ł_c``."""
    g = logdet_gradient(inv, third)
    return logdet_hessian(inv, third, fourth) - np.einsum("...klb,...bc,...c->...kl", third, inv, g)


def tensor_norm(inv, t):
    k = t.ndim - inv.ndim + 2
    letters = "abcdefgh"[:k]
    primed = "pqrstuvw"[:k]
    spec = ",".join(f"...{a}{p}" for a, p in zip(letters, primed))
    spec += f",...{letters},...{primed}->..."
    sq = np.einsum(spec, *([inv] * k), t, t)
    return np.sqrt(np.maximum(sq, 0.0))


def _field(u, values, band):
    vals = np.where(u.grid.mask(band), values, np.nan)
    return ScalarField(u.grid, vals, band)


def invariant_phi(u: PotentialData) -> ScalarField:
    hb = hessian_bundle(u)
    band = max(hb.band, u.band_of(3))
    return _field(u, phi_from_tensors(hb.inv, u.derivative(3)), band)


def invariant_j(u: PotentialData) -> ScalarField:
    hb = hessian_bundle(u)
    band = max(hb.band, u.band_of(3))
    return _field(u, j_from_tensors(hb.inv, u.derivative(3)), band)


def invariant_theta(u: PotentialData) -> ScalarField:
    phi = invariant_phi(u)
    j = invariant_j(u)
    return j + phi


@dataclass(frozen=True, eq=False)
class InvariantField:
    phi: ScalarField
    j: ScalarField
    theta: ScalarField
    ric: ScalarField
    kappa: ScalarField
    kappa_partial: bool
    grad_ric: ScalarField | None = None
    hess_ric: ScalarField | None = None


FULL_KAPPA_MAX_H = 1.0 / 128


def _covariant_derivative(t, inv, third, h):
    """``nabla_c T_{ab...}`` for the Levi-Civita connection of ``G_u``.

    The partial derivative is a central difference; Christoffel symbols are
    ``Gamma^m_{ca} = 1/2 u^{mn} u_{nca}``.
    """
    k = t.ndim - 2
    d = np.stack([apply_stencil(t, (1, 0), h), apply_stencil(t, (0, 1), h)], axis=2)
    gamma = 0.5 * np.einsum("...mn,...nca->...mca", inv, third)
    out = d.copy()
    idx = "abcdefg"[:k]
    for pos in range(k):
        src = idx[:pos] + "m" + idx[pos + 1:]
        out -= np.einsum(f"...mz{idx[pos]},...{src}->...z{idx}", gamma, t)
    return out


def ricci_and_kappa(u: PotentialData, full: bool = False) -> InvariantField:
    """Phi, J, Theta, the Ricci norm and the curvature aggregate K.

    With ``full=False`` K is the Ricci-norm part only (flagged as partial).
    The covariant-derivative terms need ``h <= 1/128``; coarser grids fall
    back to the partial value with a warning.
    """
    hb = hessian_bundle(u)
    third = u.derivative(3)
    fourth = u.derivative(4)
    band = max(hb.band, u.band_of(4))
    ric_t = ricci_from_tensors(hb.inv, third, fourth)
    ric = _field(u, tensor_norm(hb.inv, ric_t), band)
    phi = invariant_phi(u)
    j = invariant_j(u)
    theta = j + phi
    if full and u.grid.h > FULL_KAPPA_MAX_H * (1 + 1e-12):
        warnings.warn(f"full K needs h <= 1/128 (h={u.grid.h}); reporting the Ricci part only")
        full = False
    if not full:
        return InvariantField(phi, j, theta, ric, ric, True)
    ric_t = np.where(u.grid.mask(band)[..., None, None], ric_t, np.nan)
    d1 = _covariant_derivative(ric_t, hb.inv, third, u.grid.h)
    d2 = _covariant_derivative(d1, hb.inv, third, u.grid.h)
    grad = _field(u, tensor_norm(hb.inv, d1), band + 1)
    hess = _field(u, tensor_norm(hb.inv, d2), band + 2)
    kappa = ric + ScalarField(u.grid, grad.values ** (2 / 3), grad.band) \
        + ScalarField(u.grid, hess.values ** 0.5, hess.band)
    return InvariantField(phi, j, theta, ric, kappa, False, grad, hess)


def scalar_curvature(u: PotentialData) -> ScalarField:
    """Trace of the Ricci tensor, ``u^{kl} R_kl`` (equals the Abreu scalar curvature)."""
    hb = hessian_bundle(u)
    band = max(hb.band, u.band_of(4))
    r = ricci_from_tensors(hb.inv, u.derivative(3), u.derivative(4))
    return _field(u, np.einsum("...kl,...kl->...", hb.inv, r), band)


# ---------------------------------------------------------------- geodesic distance

_NEIGHBOURS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def _boundary_seed(u: PotentialData, nodes, edge: int, mode: str):
    """Estimated Calabi length of the normal segment from ``edge`` to each node."""
    p = u.polytope
    pts = u.grid.points[nodes[:, 0], nodes[:, 1]]
    nu = p.normals[edge].astype(float)
    l = edge_values(p, pts)[:, edge]
    if mode == "zero":
        return np.zeros(len(nodes))
    n = nu / np.linalg.norm(nu)
    s = l / np.linalg.norm(nu)
    hess = hessian_bundle(u).hess[nodes[:, 0], nodes[:, 1]]
    if mode == "local":
        return s * np.sqrt(np.einsum("i,nij,j->n", n, hess, n))
    if mode != "quadrature":
        raise ValueError(f"unknown seed mode {mode!r}")
    # integrate sqrt(n^T D^2 u n) along the normal segment; substituting
    # sigma = s tau^2 removes the 1/sqrt(sigma) singularity of the Guillemin part
    tau, w = np.polynomial.legendre.leggauss(12)
    tau = 0.5 * (tau + 1.0)
    w = 0.5 * w
    foot = pts - s[:, None] * n
    sigma = s[:, None] * tau[None, :] ** 2
    q = foot[:, None, :] + sigma[..., None] * n
    base_h = u.base.derivatives(q.reshape(-1, 2), 2)[2].reshape(len(nodes), len(tau), 2, 2)
    extra = hess - u.base.derivatives(pts, 2)[2]  # smooth part, frozen at the node
    hq = base_h + extra[:, None]
    speed = np.sqrt(np.maximum(np.einsum("i,nkij,j->nk", n, hq, n), 0.0))
    return (speed * 2 * s[:, None] * tau[None, :] * w[None, :]).sum(axis=1)


def geodesic_distance_field(u: PotentialData, target="boundary", seed: str = "quadrature"):
    """Graph distance in the Calabi metric on the 8-neighbour lattice.

    ``target`` is ``"boundary"``, an edge index, or a list of node indices.
    Edge weights are ``sqrt(d^T G d)`` with ``G`` the mean of the endpoint
    Hessians.  Boundary targets seed the outermost evaluable layer with an
    estimate of the remaining distance (``seed``: ``"quadrature"``,
    ``"local"`` or ``"zero"``).
    """
    hb = hessian_bundle(u)
    grid = u.grid
    mask = grid.mask(hb.band)
    n1, n2 = grid.shape
    dist = np.full(grid.shape, np.inf)
    heap = []
    if isinstance(target, str) and target == "boundary" or isinstance(target, (int, np.integer)):
        outer = np.argwhere(mask & (grid.band == hb.band))
        pts = grid.points[outer[:, 0], outer[:, 1]]
        l = edge_values(u.polytope, pts) / np.linalg.norm(u.polytope.normals, axis=1)
        nearest = np.argmin(l, axis=1)
        edges = range(u.polytope.n_edges) if isinstance(target, str) else [int(target)]
        for e in edges:
            sel = outer[nearest == e]
            if len(sel) == 0:
                continue
            vals = _boundary_seed(u, sel, e, seed)
            for (a, b), v in zip(sel, vals):
                if v < dist[a, b]:
                    dist[a, b] = v
    else:
        for a, b in target:
            dist[a, b] = 0.0
    for a, b in np.argwhere(np.isfinite(dist)):
        heapq.heappush(heap, (dist[a, b], a * n2 + b))
    if not heap:
        raise ValueError("no seed nodes for the requested target")
    h = grid.h
    hess = hb.hess
    done = np.zeros(grid.shape, dtype=bool)
    while heap:
        d, k = heapq.heappop(heap)
        a, b = divmod(k, n2)
        if done[a, b]:
            continue
        done[a, b] = True
        for da, db in _NEIGHBOURS:
            c, e = a + da, b + db
            if not (0 <= c < n1 and 0 <= e < n2) or not mask[c, e] or done[c, e]:
                continue
            g = 0.5 * (hess[a, b] + hess[c, e])
            step = h * math.sqrt(g[0, 0] * da * da + 2 * g[0, 1] * da * db + g[1, 1] * db * db)
            nd = d + step
            if nd < dist[c, e]:
                dist[c, e] = nd
                heapq.heappush(heap, (nd, c * n2 + e))
    if np.any(mask & ~done):
        raise ValueError("interior graph is disconnected")
    return ScalarField(grid, np.where(mask, dist, np.nan), hb.band)


# ---------------------------------------------------------------- sections

def section(u: PotentialData, node, sigma: float):
    """Sublevel ``{q : u(q) - u(p) - grad u(p).(q - p) <= sigma}`` and its Euclidean diameter."""
    node = tuple(int(c) for c in node)
    grid = u.grid
    if not grid.mask(u.band_of(1))[node]:
        raise ValueError(f"gradient unavailable at node {node}")
    val = u.derivative(0)
    grad = u.derivative(1)[node]
    pts = grid.points
    p = pts[node]
    height = val - val[node] - (pts - p) @ grad
    height[node] = 0.0
    valid = grid.mask(u.band_of(0))
    members = valid & (height <= sigma)
    if np.any(members & (grid.band <= u.band_of(0))):
        raise SectionError("non-compact at this resolution: section reaches the mask boundary")
    idx = np.argwhere(members)
    if len(idx) <= 1:
        return members, 0.0
    # diameter is attained on the outer nodes of the set
    padded = np.pad(members, 1)
    inner = (padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:])
    rim = pts[members & ~inner]
    d = rim[:, None, :] - rim[None, :, :]
    return members, float(np.sqrt((d**2).sum(-1)).max())
