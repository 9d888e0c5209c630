"""Delzant polygons, their edge functions and the Guillemin potential.

A polygon is stored as a list of edges ``(nu_i, lambda_i)`` with integer
inward normals ``nu_i``; the interior is ``{xi : <xi, nu_i> - lambda_i > 0}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

VERTEX_TOL = 1e-12


class PolytopeError(ValueError):
    """Malformed, empty or unbounded polygon description."""


@dataclass(frozen=True)
class Polytope:
    """Convex polygon ``{xi : l_i(xi) > 0}`` with integer inward normals."""

    normals: np.ndarray  # (m, 2) int
    offsets: np.ndarray  # (m,) float
    vertices: np.ndarray = field(repr=False)  # (k, 2), counter-clockwise
    edge_vertices: tuple = field(repr=False)  # per edge: (start, end) vertex

    @property
    def n_edges(self) -> int:
        return len(self.offsets)

    @property
    def diameter(self) -> float:
        v = self.vertices
        d = v[:, None, :] - v[None, :, :]
        return float(np.sqrt((d**2).sum(-1)).max())

    @property
    def centroid(self) -> np.ndarray:
        return polygon_centroid(self.vertices)

    @property
    def area(self) -> float:
        return polygon_area(self.vertices)

    def contains(self, xi) -> bool:
        return bool(np.all(edge_values(self, xi) > 0))

    def inradius(self) -> float:
        """Radius of the largest inscribed disk (a 3-variable LP)."""
        from scipy.optimize import linprog

        norms = np.linalg.norm(self.normals, axis=1)
        # maximize r s.t. nu.xi - lambda >= r |nu|
        a_ub = np.column_stack([-self.normals, norms])
        res = linprog([0, 0, -1], A_ub=a_ub, b_ub=-self.offsets,
                      bounds=[(None, None)] * 3, method="highs")
        return float(res.x[2])

    def to_text(self) -> str:
        lines = [f"{int(n[0])} {int(n[1])} {float(lam)!r}"
                 for n, lam in zip(self.normals, self.offsets)]
        return "\n".join(lines) + "\n"


def polygon_area(vertices: np.ndarray) -> float:
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_centroid(vertices: np.ndarray) -> np.ndarray:
    x, y = vertices[:, 0], vertices[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = cross.sum() / 2.0
    return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * a)


def _is_bounded(normals: np.ndarray) -> bool:
    # bounded iff the inward normals positively span the plane,
    # i.e. every angular gap between consecutive normals is < pi
    ang = np.sort(np.arctan2(normals[:, 1], normals[:, 0]))
    gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * np.pi]]))
    return bool(gaps.max() < np.pi - 1e-12)


def make_polytope(edges) -> Polytope:
    """Build a :class:`Polytope` from ``[((n1, n2), lam), ...]``."""
    edges = list(edges)
    if len(edges) < 3:
        raise PolytopeError(f"need at least 3 edges, got {len(edges)}")
    normals = []
    for nu, _ in edges:
        if len(nu) != 2:
            raise PolytopeError(f"normal {nu!r} is not a 2-vector")
        if any(float(c) != int(c) for c in nu):
            raise PolytopeError(f"normal {nu!r} is not integral")
        normals.append([int(c) for c in nu])
    normals = np.array(normals, dtype=np.int64)
    offsets = np.array([float(lam) for _, lam in edges])
    if np.any((normals == 0).all(axis=1)):
        raise PolytopeError("zero normal vector")
    if not _is_bounded(normals):
        raise PolytopeError("unbounded polygon: normals do not positively span R^2")

    pts = []
    for a, b in combinations(range(len(offsets)), 2):
        m = normals[[a, b]].astype(float)
        det = np.linalg.det(m)
        if abs(det) < 1e-14:
            continue
        p = np.linalg.solve(m, offsets[[a, b]])
        l = normals @ p - offsets
        if np.all(l >= -VERTEX_TOL * (1 + abs(p).max())):
            pts.append(p)
    if len(pts) < 3:
        raise PolytopeError("empty interior")
    pts = np.array(pts)
    # merge coincident intersections
    uniq = []
    for p in pts:
        if not any(np.linalg.norm(p - q) <= 1e-10 * (1 + abs(p).max()) for q in uniq):
            uniq.append(p)
    pts = np.array(uniq)
    c = pts.mean(axis=0)
    order = np.argsort(np.arctan2(pts[:, 1] - c[1], pts[:, 0] - c[0]))
    verts = pts[order]
    if len(verts) < 3 or polygon_area(verts) <= 1e-14:
        raise PolytopeError("empty interior")

    edge_vertices = []
    scale = 1 + np.abs(verts).max()
    for i in range(len(offsets)):
        l = verts @ normals[i] - offsets[i]
        on = np.flatnonzero(np.abs(l) <= 1e-10 * scale * np.linalg.norm(normals[i]))
        if len(on) != 2:
            raise PolytopeError(f"edge {i} does not support a side of the polygon")
        a, b = on
        # counter-clockwise orientation along the boundary
        if (b - a) % len(verts) != 1:
            a, b = b, a
        edge_vertices.append((int(a), int(b)))
    return Polytope(normals, offsets, verts, tuple(edge_vertices))


def parse_polytope(text: str) -> Polytope:
    """Parse one edge per line: ``n1 n2 lambda``; ``#`` starts a comment."""
    edges = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 3:
            raise PolytopeError(f"line {lineno}: expected 'n1 n2 lambda', got {raw!r}")
        try:
            n1, n2 = int(parts[0]), int(parts[1])
        except ValueError:
            raise PolytopeError(f"line {lineno}: normal entries must be integers") from None
        try:
            lam = float(parts[2])
        except ValueError:
            raise PolytopeError(f"line {lineno}: bad offset {parts[2]!r}") from None
        edges.append(((n1, n2), lam))
    return make_polytope(edges)


def load_polytope(path) -> Polytope:
    return parse_polytope(Path(path).read_text())


def unit_square() -> Polytope:
    return make_polytope([((1, 0), 0.0), ((-1, 0), -1.0), ((0, 1), 0.0), ((0, -1), -1.0)])


def standard_simplex() -> Polytope:
    return make_polytope([((1, 0), 0.0), ((0, 1), 0.0), ((-1, -1), -1.0)])


def centered_square(a: float) -> Polytope:
    """The square ``[-a, a]^2``."""
    return make_polytope([((1, 0), -a), ((-1, 0), -a), ((0, 1), -a), ((0, -1), -a)])


@dataclass(frozen=True)
class DelzantReport:
    determinants: list  # per vertex
    primitive: list  # per edge
    passed: bool


def check_delzant(p: Polytope) -> DelzantReport:
    dets = []
    for k in range(len(p.vertices)):
        active = [i for i, (a, b) in enumerate(p.edge_vertices) if k in (a, b)]
        if len(active) != 2:
            dets.append(0)
            continue
        m = p.normals[active]
        dets.append(int(round(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])))
    primitive = [math.gcd(int(n[0]), int(n[1])) == 1 for n in p.normals]
    passed = all(abs(d) == 1 for d in dets) and all(primitive)
    return DelzantReport(dets, primitive, passed)


def edge_values(p: Polytope, xi) -> np.ndarray:
    """``l_i(xi)`` for each edge; for an ``(..., 2)`` input returns ``(..., m)``."""
    xi = np.asarray(xi, dtype=float)
    return xi @ p.normals.T.astype(float) - p.offsets


@dataclass(frozen=True)
class GuilleminJet:
    value: np.ndarray
    gradient: np.ndarray | None = None
    hessian: np.ndarray | None = None
    third: np.ndarray | None = None
    fourth: np.ndarray | None = None

    def derivative(self, k: int):
        return (self.value, self.gradient, self.hessian, self.third, self.fourth)[k]


class BoundaryError(ValueError):
    """Point on or outside the polygon boundary."""


def guillemin_jet(p: Polytope, xi, order: int = 2) -> GuilleminJet:
    """Closed-form derivatives of ``v = sum_i l_i log l_i`` up to ``order`` (<= 4).

    Accepts a single point or an ``(N, 2)`` array of points.
    """
    if not 0 <= order <= 4:
        raise ValueError("order must be in 0..4")
    l = edge_values(p, xi)
    if np.any(l <= 0):
        raise BoundaryError("guillemin_jet needs min_i l_i(xi) > 0")
    nu = p.normals.astype(float)
    out = [np.sum(l * np.log(l), axis=-1)]
    if order >= 1:
        out.append((1.0 + np.log(l)) @ nu)
    # d^k v = (-1)^k (k-2)! sum_i nu^{(x)k} / l^{k-1} for k >= 2
    for k in range(2, order + 1):
        w = (-1.0) ** k * math.factorial(k - 2) / l ** (k - 1)
        letters = "abcd"[:k]
        spec = "...m," + ",".join(f"m{c}" for c in letters) + "->..." + letters
        out.append(np.einsum(spec, w, *([nu] * k)))
    return GuilleminJet(*out)


def euclidean_boundary_distance(p: Polytope, xi) -> np.ndarray | float:
    """Exact distance from point(s) in the closure to the boundary segments."""
    x = np.atleast_2d(np.asarray(xi, dtype=float))
    best = np.full(len(x), np.inf)
    for a, b in p.edge_vertices:
        pa, pb = p.vertices[a], p.vertices[b]
        d = pb - pa
        t = np.clip(((x - pa) @ d) / (d @ d), 0.0, 1.0)
        proj = pa + t[:, None] * d
        best = np.minimum(best, np.linalg.norm(x - proj, axis=1))
    return float(best[0]) if np.ndim(xi) == 1 else best


@dataclass(frozen=True)
class AffineMap:
    """``y = matrix @ x + offset``."""

    matrix: np.ndarray
    offset: np.ndarray

    def __call__(self, x):
        return np.asarray(x, dtype=float) @ self.matrix.T + self.offset

    def inverse(self) -> AffineMap:
        inv = np.linalg.inv(self.matrix)
        return AffineMap(inv, -inv @ self.offset)

    def compose(self, other: AffineMap) -> AffineMap:
        """``self o other``."""
        return AffineMap(self.matrix @ other.matrix, self.matrix @ other.offset + self.offset)


def min_volume_ellipse(points: np.ndarray, tol: float = 1e-9, centered: bool = False,
                       max_iter: int = 200000):
    """Minimum-area enclosing ellipse ``{x : (x-c)^T M (x-c) <= 1}``.

    Khachiyan's coordinate ascent on the design weights, with Wolfe-Atwood
    away steps.  ``centered=True`` pins the center at the origin.
    Returns ``(c, M)``.
    """
    pts = np.asarray(points, dtype=float)
    n, d = pts.shape
    q = pts.T if centered else np.vstack([pts.T, np.ones(n)])
    dim = q.shape[0]
    u = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        x = (q * u) @ q.T
        m = np.einsum("in,ij,jn->n", q, np.linalg.inv(x), q)
        j = int(np.argmax(m))
        support = np.flatnonzero(u > 0)
        k = int(support[np.argmin(m[support])])
        up = (m[j] - dim) / dim
        down = (dim - m[k]) / dim
        if max(up, down) <= tol:
            break
        if up >= down:
            beta = (m[j] - dim) / (dim * (m[j] - 1))
            u *= 1 - beta
            u[j] += beta
        else:
            cap = u[k] / (1 - u[k])
            beta = cap if m[k] <= 1 else min((dim - m[k]) / (dim * (m[k] - 1)), cap)
            u *= 1 + beta
            u[k] -= beta
            u[k] = max(u[k], 0.0)
    if centered:
        c = np.zeros(d)
    else:
        c = pts.T @ u
    cov = (pts - c).T @ (u[:, None] * (pts - c))
    mat = np.linalg.inv(cov) / d
    # enforce containment exactly after the approximate iteration
    worst = np.einsum("ni,ij,nj->n", pts - c, mat, pts - c).max()
    return c, mat / worst


def normalize_domain(vertices, tol: float = 1e-9):
    """Affine map ``T`` with ``T(body)`` centered at its centroid and squeezed
    between ``2^{-3/2} D_1(0)`` and ``D_1(0)``.

    Returns ``(T, T(vertices))``.
    """
    verts = np.asarray(vertices, dtype=float)
    if len(verts) < 3 or abs(polygon_area(verts)) <= 1e-14:
        raise PolytopeError("degenerate (zero-area) body")
    if polygon_area(verts) < 0:
        verts = verts[::-1]
    c = polygon_centroid(verts)
    shifted = verts - c
    # centered ellipse of K u -K; since -K is contained in 2K (centroid), the
    # inner ball of radius 2^{-3/2} follows from John's theorem
    sym = np.vstack([shifted, -shifted])
    _, mat = min_volume_ellipse(sym, tol=tol, centered=True)
    w, q = np.linalg.eigh((mat + mat.T) / 2)
    root = q @ np.diag(np.sqrt(w)) @ q.T
    t = AffineMap(root, -root @ c)
    return t, t(verts)


def sandwich_check(vertices, n: int = 2, tol: float = 1e-9) -> dict:
    """Evaluate the normalized-domain conditions by support functions."""
    verts = np.asarray(vertices, dtype=float)
    if polygon_area(verts) < 0:
        verts = verts[::-1]
    centroid = polygon_centroid(verts)
    outer = float(np.linalg.norm(verts, axis=1).max())
    # outward normals; distance from 0 to each edge line
    e = np.roll(verts, -1, axis=0) - verts
    normal = np.column_stack([e[:, 1], -e[:, 0]])
    normal /= np.linalg.norm(normal, axis=1)[:, None]
    inner = float(np.min((verts * normal).sum(1)))
    r_in = n ** -1.5
    return {
        "centroid": centroid,
        "outer_radius": outer,
        "inner_radius": inner,
        "passed": bool(np.linalg.norm(centroid) <= 1e-8 and outer <= 1 + tol
                       and inner >= r_in - tol),
    }
