"""Uniform masked lattice over a polygon, scalar fields and central differences.

Nodes are the lattice points ``h * (i, j)`` of the plane.  A node is interior
when every edge function is positive there; its *band* is the Chebyshev
distance (in cells) to the nearest non-interior node, so band-1 nodes touch
the boundary and a stencil of radius ``r`` applied at a band-``b`` node only
reads nodes of band ``>= b - r``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.sparse as sp
from scipy import ndimage

from .funcspec import Expr, FuncDomainError, evaluate
from .polytope import Polytope

MIN_INTERIOR_NODES = 9

# second-order central stencils, offset -> weight (to be divided by h^k)
STENCILS_1D = {
    0: {0: 1.0},
    1: {-1: -0.5, 1: 0.5},
    2: {-1: 1.0, 0: -2.0, 1: 1.0},
    3: {-2: -0.5, -1: 1.0, 1: -1.0, 2: 0.5},
    4: {-2: 1.0, -1: -4.0, 0: 6.0, 1: -4.0, 2: 1.0},
}


class GridError(ValueError):
    pass


class BandError(GridError):
    """The requested stencil does not fit on any node of the field's band."""


def band_increment(alpha) -> int:
    return math.ceil(sum(alpha) / 2)


@dataclass(frozen=True, eq=False)
class Grid:
    polytope: Polytope = field(repr=False)
    h: float
    origin_index: tuple  # lattice index of array entry [0, 0]
    band: np.ndarray = field(repr=False)  # (n1, n2) int, 0 = not interior

    @property
    def shape(self):
        return self.band.shape

    @property
    def origin(self) -> np.ndarray:
        return np.array(self.origin_index, dtype=float) * self.h

    @property
    def points(self) -> np.ndarray:
        i = np.arange(self.shape[0]) + self.origin_index[0]
        j = np.arange(self.shape[1]) + self.origin_index[1]
        ii, jj = np.meshgrid(i, j, indexing="ij")
        return np.stack([ii * self.h, jj * self.h], axis=-1)

    @property
    def interior(self) -> np.ndarray:
        return self.band >= 1

    @property
    def max_band(self) -> int:
        return int(self.band.max())

    def mask(self, min_band: int) -> np.ndarray:
        return self.band >= max(min_band, 1)

    def flat_index(self, min_band: int) -> np.ndarray:
        """Row-major flat indices of the nodes with ``band >= min_band``."""
        return np.flatnonzero(self.mask(min_band).ravel())

    def node_of(self, xi) -> tuple:
        """Array index of the lattice node nearest to ``xi``."""
        k = np.rint(np.asarray(xi, dtype=float) / self.h).astype(int)
        return (int(k[0] - self.origin_index[0]), int(k[1] - self.origin_index[1]))

    def point_of(self, node) -> np.ndarray:
        return np.array([(node[0] + self.origin_index[0]) * self.h,
                         (node[1] + self.origin_index[1]) * self.h])


def _classify(p: Polytope, h: float, ii: np.ndarray, jj: np.ndarray) -> np.ndarray:
    nu = p.normals.astype(float)
    l = (ii[..., None] * nu[:, 0] + jj[..., None] * nu[:, 1]) * h - p.offsets
    inside = np.all(l > 0, axis=-1)
    # decide near-zero edge values in exact rational arithmetic
    scale = 1.0 + np.abs(p.offsets).max() + h * (np.abs(ii).max() + np.abs(jj).max())
    close = np.any(np.abs(l) <= 1e-9 * scale, axis=-1) & np.all(l > -1e-9 * scale, axis=-1)
    if np.any(close):
        hq = Fraction(h).limit_denominator(10**9)
        lam = [Fraction(float(x)).limit_denominator(10**9) for x in p.offsets]
        for a, b in zip(*np.nonzero(close)):
            ok = all(hq * (int(n[0]) * int(ii[a, b]) + int(n[1]) * int(jj[a, b])) - lk > 0
                     for n, lk in zip(p.normals, lam))
            inside[a, b] = ok
    return inside


def build_grid(p: Polytope, h: float) -> Grid:
    """Lattice ``h Z^2`` restricted to the polygon, with band indices."""
    if not h > 0:
        raise GridError("spacing must be positive")
    lo = p.vertices.min(axis=0)
    hi = p.vertices.max(axis=0)
    i0 = int(math.floor(lo[0] / h)) - 1
    j0 = int(math.floor(lo[1] / h)) - 1
    n1 = int(math.ceil(hi[0] / h)) + 2 - i0
    n2 = int(math.ceil(hi[1] / h)) + 2 - j0
    ii, jj = np.meshgrid(np.arange(n1) + i0, np.arange(n2) + j0, indexing="ij")
    inside = _classify(p, h, ii, jj)
    count = int(inside.sum())
    if count < MIN_INTERIOR_NODES:
        raise GridError(f"h={h} too coarse: {count} interior nodes (need {MIN_INTERIOR_NODES})")
    band = ndimage.distance_transform_cdt(inside, metric="chessboard").astype(np.int64)
    return Grid(p, float(h), (i0, j0), band)


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real values on the nodes of ``grid`` with ``band >= band``; NaN elsewhere."""

    grid: Grid = field(repr=False)
    values: np.ndarray = field(repr=False)
    band: int = 1

    @property
    def valid(self) -> np.ndarray:
        return self.grid.mask(self.band)

    def vector(self) -> np.ndarray:
        return self.values[self.valid]

    def restrict(self, band: int) -> ScalarField:
        band = max(band, self.band)
        vals = np.where(self.grid.mask(band), self.values, np.nan)
        return ScalarField(self.grid, vals, band)

    def max_abs(self, band: int | None = None) -> float:
        f = self if band is None else self.restrict(band)
        return float(np.max(np.abs(f.vector())))

    def argmax(self, band: int | None = None):
        f = self if band is None else self.restrict(band)
        vals = np.where(f.valid, f.values, -np.inf)
        return np.unravel_index(int(np.argmax(vals)), vals.shape)

    def __add__(self, other):
        return _combine(self, other, np.add)

    def __sub__(self, other):
        return _combine(self, other, np.subtract)

    def __mul__(self, other):
        return _combine(self, other, np.multiply)

    def __neg__(self):
        return ScalarField(self.grid, -self.values, self.band)


def _combine(a: ScalarField, b, op) -> ScalarField:
    if isinstance(b, ScalarField):
        if b.grid is not a.grid:
            raise GridError("fields live on different grids")
        band = max(a.band, b.band)
        return ScalarField(a.grid, np.where(a.grid.mask(band), op(a.values, b.values), np.nan), band)
    return ScalarField(a.grid, op(a.values, b), a.band)


def field_from_values(grid: Grid, values, band: int = 1) -> ScalarField:
    """Wrap a full ``(n1, n2)`` array, masking nodes below ``band`` with NaN."""
    values = np.asarray(values, dtype=float)
    return ScalarField(grid, np.where(grid.mask(band), values, np.nan), band)


def sample(e, grid: Grid) -> ScalarField:
    """Evaluate an :class:`Expr` or a vectorised callable ``f(points)`` on interior nodes."""
    pts = grid.points
    mask = grid.interior
    vals = np.full(grid.shape, np.nan)
    if isinstance(e, Expr):
        vals[mask] = evaluate(e, pts[mask])
    else:
        out = np.asarray(e(pts[mask]), dtype=float)
        if not np.all(np.isfinite(out)):
            bad = pts[mask][~np.isfinite(out)][0]
            raise FuncDomainError("non-finite value", getattr(e, "__name__", "function"), bad)
        vals[mask] = out
    return ScalarField(grid, vals, 1)


def apply_stencil(values: np.ndarray, alpha, h: float) -> np.ndarray:
    """Central difference ``d^alpha`` over the first two axes (NaN where the stencil leaves the data)."""
    a, b = alpha
    sa, sb = STENCILS_1D[a], STENCILS_1D[b]
    r = 2
    n1, n2 = values.shape[:2]
    pad = np.full((n1 + 2 * r, n2 + 2 * r) + values.shape[2:], np.nan)
    pad[r:-r, r:-r] = values
    out = np.zeros_like(values, dtype=float)
    for di, wi in sa.items():
        for dj, wj in sb.items():
            out = out + (wi * wj) * pad[r + di: r + di + n1, r + dj: r + dj + n2]
    return out / h ** (a + b)


def fd_derivative(f: ScalarField, alpha) -> ScalarField:
    """Second-order central difference ``d^alpha f`` with ``|alpha| <= 4``.

    The result lives on ``band >= f.band + ceil(|alpha| / 2)``.
    """
    alpha = tuple(int(x) for x in alpha)
    if len(alpha) != 2 or min(alpha) < 0 or sum(alpha) > 4:
        raise ValueError(f"bad multi-index {alpha}")
    band = f.band + band_increment(alpha)
    if not np.any(f.grid.mask(band)):
        raise BandError(f"no node of band >= {band} for derivative {alpha}")
    vals = apply_stencil(f.values, alpha, f.grid.h)
    return ScalarField(f.grid, np.where(f.grid.mask(band), vals, np.nan), band)


def stencil_matrix(grid: Grid, alpha, src_band: int, dst_band: int) -> sp.csr_matrix:
    """Sparse ``d^alpha`` from the node vector of ``band >= src_band`` to ``band >= dst_band``.

    Row/column order is row-major over the respective node sets.
    """
    a, b = alpha
    n1, n2 = grid.shape
    src = grid.flat_index(src_band)
    dst = grid.flat_index(dst_band)
    col_of = np.full(n1 * n2, -1, dtype=np.int64)
    col_of[src] = np.arange(len(src))
    di, dj = np.divmod(dst, n2)
    rows, cols, vals = [], [], []
    for oi, wi in STENCILS_1D[a].items():
        for oj, wj in STENCILS_1D[b].items():
            ti, tj = di + oi, dj + oj
            c = col_of[ti * n2 + tj]
            if np.any(c < 0):
                raise BandError(f"stencil {alpha} leaves band {src_band} from band {dst_band}")
            rows.append(np.arange(len(dst)))
            cols.append(c)
            vals.append(np.full(len(dst), wi * wj))
    m = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(len(dst), len(src)))
    m.sum_duplicates()
    return m / grid.h ** (a + b)


def bilinear(f: ScalarField, points) -> np.ndarray:
    """Bilinear interpolation of ``f`` (NaN where a cell corner is undefined)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    g = f.grid
    s = pts / g.h - np.array(g.origin_index)
    i = np.floor(s[:, 0]).astype(int)
    j = np.floor(s[:, 1]).astype(int)
    ti, tj = s[:, 0] - i, s[:, 1] - j
    n1, n2 = g.shape
    ok = (i >= 0) & (j >= 0) & (i + 1 < n1) & (j + 1 < n2)
    out = np.full(len(pts), np.nan)
    i, j, ti, tj = i[ok], j[ok], ti[ok], tj[ok]
    v = f.values
    out[ok] = ((1 - ti) * (1 - tj) * v[i, j] + ti * (1 - tj) * v[i + 1, j]
               + (1 - ti) * tj * v[i, j + 1] + ti * tj * v[i + 1, j + 1])
    return out


def format_float(x) -> str:
    return repr(float(x))


def to_csv(f: ScalarField, header: str | None = None) -> str:
    """``xi1,xi2,value`` rows for the valid nodes in row-major order."""
    buf = io.StringIO()
    if header:
        buf.write(f"# {header}\n")
    buf.write("xi1,xi2,value\n")
    pts = f.grid.points[f.valid]
    for (x, y), v in zip(pts, f.vector()):
        buf.write(f"{format_float(x)},{format_float(y)},{format_float(v)}\n")
    return buf.getvalue()
