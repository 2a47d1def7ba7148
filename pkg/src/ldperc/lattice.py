"""Triangular-lattice geometry.

Sites live at eta*(i + j/2, j*sqrt(3)/2) for integer axial indices
(i, j), intersected with a rectangular domain; the Voronoi cell of a
site is a regular hexagon of area (sqrt(3)/2)*eta^2.  Sites are stored
row-major (by j, then i), and every row occupies a contiguous index
range, so (i, j) -> flat index is pure arithmetic (no hash maps).

Rectangular regions are half-open [x0, x1) x [y0, y1) except that an
edge lying at or beyond the domain's own upper edge is treated closed;
this makes disjoint rectangles that tile the domain partition the site
set exactly, while region == domain returns every site.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROOT3_HALF = np.sqrt(3.0) / 2.0

# Axial neighbor offsets (di, dj) in cyclic angular order 0..300 degrees.
NEIGHBOR_OFFSETS = ((1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1))

# Structuring element encoding the six-neighbor adjacency on the (j, i)
# index grid, in the layout scipy.ndimage.label expects.
TRI_STRUCTURE = np.array([[0, 1, 1], [1, 1, 1], [1, 1, 0]], dtype=bool)

_MAX_SITES = 2**31


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle [x0, x1] x [y0, y1]."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError(f"empty rectangle: {self}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    def contains_rect(self, other: "Rect", tol: float = 0.0) -> bool:
        return (
            other.x0 >= self.x0 - tol
            and other.y0 >= self.y0 - tol
            and other.x1 <= self.x1 + tol
            and other.y1 <= self.y1 + tol
        )


@dataclass(frozen=True)
class RectQuad:
    """Rectangular quad: rect plus which side pair is to be connected.

    orientation "h": connect left side to right side; "v": bottom to top.
    """

    rect: Rect
    orientation: str

    def __post_init__(self):
        if self.orientation not in ("h", "v"):
            raise ValueError(f"orientation must be 'h' or 'v', got {self.orientation!r}")

    def key(self) -> tuple:
        r = self.rect
        return (r.x0, r.y0, r.x1, r.y1, self.orientation)


class Lattice:
    """Sites of the triangular lattice of mesh eta inside a rect domain."""

    def __init__(self, eta: float, domain: Rect):
        if not eta > 0:
            raise ValueError(f"eta must be positive, got {eta}")
        self.eta = float(eta)
        self.domain = domain

        rowh = self.eta * ROOT3_HALF
        # 1e-9 index-unit slack so domain edges exactly on a site row/column
        # are kept regardless of last-bit float rounding.
        j_min = int(np.ceil(domain.y0 / rowh - 1e-9))
        j_max = int(np.floor(domain.y1 / rowh + 1e-9))
        if j_max < j_min:
            raise ValueError("domain contains no lattice rows")
        n_rows = j_max - j_min + 1

        js = np.arange(j_min, j_max + 1, dtype=np.int64)
        i_lo = np.ceil(domain.x0 / self.eta - js / 2.0 - 1e-9).astype(np.int64)
        i_hi = np.floor(domain.x1 / self.eta - js / 2.0 + 1e-9).astype(np.int64)
        counts = np.maximum(i_hi - i_lo + 1, 0)
        total = int(counts.sum())
        if total <= 0:
            raise ValueError("domain contains no lattice sites")
        if total >= _MAX_SITES:
            raise ValueError(f"lattice would have {total} sites (cap {_MAX_SITES})")

        self.j_min = j_min
        self.n_rows = n_rows
        self.row_i_min = i_lo
        self.row_i_max = i_hi
        self.row_start = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
        self.n_sites = total

        i_idx = np.concatenate(
            [np.arange(i_lo[r], i_hi[r] + 1, dtype=np.int64) for r in range(n_rows)]
        ) if total else np.empty(0, dtype=np.int64)
        j_idx = np.repeat(js, counts)
        self.ij = np.column_stack([i_idx, j_idx])
        self.sites = np.column_stack(
            [self.eta * (i_idx + j_idx / 2.0), self.eta * j_idx * ROOT3_HALF]
        )
        self._neighbor_array = None

    @property
    def cell_area(self) -> float:
        return ROOT3_HALF * self.eta * self.eta

    def index_of(self, i: int, j: int) -> int:
        """Flat index of site (i, j), or -1 if outside the lattice."""
        r = j - self.j_min
        if r < 0 or r >= self.n_rows:
            return -1
        if i < self.row_i_min[r] or i > self.row_i_max[r]:
            return -1
        return int(self.row_start[r] + (i - self.row_i_min[r]))

    def index_of_array(self, i: np.ndarray, j: np.ndarray) -> np.ndarray:
        """Vectorized index_of; -1 where (i, j) is outside."""
        r = j - self.j_min
        ok = (r >= 0) & (r < self.n_rows)
        rc = np.clip(r, 0, self.n_rows - 1)
        ok &= (i >= self.row_i_min[rc]) & (i <= self.row_i_max[rc])
        idx = self.row_start[rc] + (i - self.row_i_min[rc])
        return np.where(ok, idx, -1).astype(np.int64)

    def neighbors(self, idx: int) -> np.ndarray:
        """Flat indices of the (up to six) lattice neighbors of site idx."""
        i, j = self.ij[idx]
        out = [self.index_of(i + di, j + dj) for di, dj in NEIGHBOR_OFFSETS]
        return np.array([k for k in out if k >= 0], dtype=np.int64)

    def neighbor_array(self) -> np.ndarray:
        """(N, 6) padded neighbor table, -1 where absent; cached."""
        if self._neighbor_array is None:
            i, j = self.ij[:, 0], self.ij[:, 1]
            cols = [
                self.index_of_array(i + di, j + dj) for di, dj in NEIGHBOR_OFFSETS
            ]
            self._neighbor_array = np.column_stack(cols)
        return self._neighbor_array

    def grid_shape(self) -> tuple:
        """(n_rows, n_cols) of the bounding (j, i) index grid."""
        width = int((self.row_i_max - self.row_i_min).max()) + 1 + int(
            self.row_i_min.max() - self.row_i_min.min()
        )
        return self.n_rows, width

    def to_grid(self, values: np.ndarray, fill=0) -> tuple:
        """Scatter per-site values onto the (j, i) index grid.

        Returns (grid, row0, col0) where grid[j - row0 - j_min ...] -- i.e.
        site (i, j) maps to grid[j - j_min, i - col0].
        """
        col0 = int(self.row_i_min.min())
        n_rows, n_cols = self.n_rows, int(self.row_i_max.max()) - col0 + 1
        grid = np.full((n_rows, n_cols), fill, dtype=np.asarray(values).dtype)
        grid[self.ij[:, 1] - self.j_min, self.ij[:, 0] - col0] = values
        return grid, self.j_min, col0

    def __repr__(self):
        d = self.domain
        return (
            f"Lattice(eta={self.eta!r}, domain=[{d.x0},{d.x1}]x[{d.y0},{d.y1}], "
            f"n_sites={self.n_sites})"
        )


def build_lattice(eta: float, domain: Rect) -> Lattice:
    return Lattice(eta, domain)


def sites_in_region(lat: Lattice, region: Rect) -> np.ndarray:
    """Indices of sites whose cell center lies in region.

    Half-open on upper edges unless the edge reaches the domain's upper
    edge (then closed), so rectangles tiling the domain partition the
    sites exactly and region == domain returns all sites.
    """
    x, y = lat.sites[:, 0], lat.sites[:, 1]
    tol = 1e-9 * lat.eta
    d = lat.domain
    if region.x1 >= d.x1 - tol:
        mx = (x >= region.x0 - tol) & (x <= region.x1 + tol)
    else:
        mx = (x >= region.x0 - tol) & (x < region.x1 - tol)
    if region.y1 >= d.y1 - tol:
        my = (y >= region.y0 - tol) & (y <= region.y1 + tol)
    else:
        my = (y >= region.y0 - tol) & (y < region.y1 - tol)
    return np.nonzero(mx & my)[0]
