"""Site percolation machinery on the triangular lattice.

Colorings, quad crossings, pivotality, four-arm events, the
epsilon-important set with its renormalized measure, a crossing-distance
metric between configurations, and Monte Carlo calibration of the
four-arm probability alpha4(r, 1) down to the mesh scale.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import _walker
from .gmc import SiteMeasure
from .lattice import (
    NEIGHBOR_OFFSETS,
    ROOT3_HALF,
    TRI_STRUCTURE,
    Lattice,
    Rect,
    RectQuad,
)
from .rng import generator

log = logging.getLogger(__name__)

# neighbor displacement vectors in units of eta, same order as the offsets
_NBR_VEC = tuple(
    (di + 0.5 * dj, ROOT3_HALF * dj) for di, dj in NEIGHBOR_OFFSETS
)


@dataclass
class Configuration:
    """A +/-1 coloring of the lattice sites (+1 = open)."""

    colors: np.ndarray
    lattice: Lattice
    seed: int | None = None

    def __post_init__(self):
        self.colors = np.ascontiguousarray(self.colors, dtype=np.int8)
        if self.colors.shape != (self.lattice.n_sites,):
            raise ValueError("colors length must match the site count")
        if not np.all(np.abs(self.colors) == 1):
            raise ValueError("colors must be +1 or -1")

    def flipped(self, site: int) -> "Configuration":
        c = self.colors.copy()
        c[site] = -c[site]
        return Configuration(c, self.lattice)


def sample_configuration(lat: Lattice, seed: int) -> Configuration:
    """Independent uniform colors, reproducible for a given seed."""
    rng = generator(seed)
    colors = (2 * rng.integers(0, 2, lat.n_sites) - 1).astype(np.int8)
    return Configuration(colors, lat, seed=seed)


def _site_labels(lat: Lattice, mask: np.ndarray) -> np.ndarray:
    """Connected-component label per site (0 off the mask)."""
    grid, j0, c0 = lat.to_grid(mask.astype(np.uint8), fill=0)
    lab, _ = ndimage.label(grid, structure=TRI_STRUCTURE)
    return lab[lat.ij[:, 1] - j0, lat.ij[:, 0] - c0]


def sites_connected(cfg, region_mask, a_mask, b_mask, color: int = 1) -> bool:
    """Does a path of `color` sites inside the region link the two sets?"""
    m = region_mask & (cfg.colors == color)
    a = a_mask & m
    b = b_mask & m
    if not a.any() or not b.any():
        return False
    lab = _site_labels(cfg.lattice, m)
    return bool(np.intersect1d(np.unique(lab[a]), np.unique(lab[b])).size)


def crosses(cfg: Configuration, q: RectQuad) -> bool:
    """Open crossing of the quad between its two designated sides.

    A site "touches" a side when it lies within one lattice spacing of it
    (eta horizontally, eta*sqrt(3)/2 between rows).  A quad containing no
    sites is reported uncrossed with a warning.
    """
    lat = cfg.lattice
    r = q.rect
    tol = 1e-9 * lat.eta
    x, y = lat.sites[:, 0], lat.sites[:, 1]
    inside = (
        (x >= r.x0 - tol) & (x <= r.x1 + tol)
        & (y >= r.y0 - tol) & (y <= r.y1 + tol)
    )
    if not inside.any():
        warnings.warn(f"quad {q.key()} contains no sites", stacklevel=2)
        return False
    if q.orientation == "h":
        band = lat.eta + tol
        a = inside & (x <= r.x0 + band)
        b = inside & (x >= r.x1 - band)
    else:
        band = lat.eta * ROOT3_HALF + tol
        a = inside & (y <= r.y0 + band)
        b = inside & (y >= r.y1 - band)
    return sites_connected(cfg, inside, a, b, color=1)


def pivotal_for(cfg: Configuration, site: int, quads) -> bool:
    """Does flipping the site change "all quads are crossed"?"""
    lat = cfg.lattice
    x, y = lat.sites[site]
    tol = 1e-9 * lat.eta
    if not any(
        q.rect.x0 - tol <= x <= q.rect.x1 + tol
        and q.rect.y0 - tol <= y <= q.rect.y1 + tol
        for q in quads
    ):
        return False
    flipped = cfg.flipped(site)
    f0 = all(crosses(cfg, q) for q in quads)
    f1 = all(crosses(flipped, q) for q in quads)
    return f0 != f1


def _arm_strand_count(cfg: Configuration, site: int, r_in: float, r_out: float) -> int:
    """Alternations of boundary-reaching cluster colors around Box(r_in).

    Clusters live in the annulus Box(r_out) \\ Box(r_in) (sup-norm boxes
    around the site); a cluster counts when it touches both the ring of
    cells adjacent to the inner box and a cell adjacent to the exterior
    of the outer box.  Four alternations = four alternating arms.
    """
    lat = cfg.lattice
    tol = 1e-6 * lat.eta
    zx, zy = lat.sites[site]
    dx = lat.sites[:, 0] - zx
    dy = lat.sites[:, 1] - zy
    mn = np.maximum(np.abs(dx), np.abs(dy))
    box = mn <= r_in + tol
    region = mn <= r_out + tol
    ann = region & ~box
    nbr = lat.neighbor_array()
    boxpad = np.concatenate([box, [False]])
    ring = ann & boxpad[nbr].any(axis=1)
    outm = np.zeros(lat.n_sites, dtype=bool)
    for vx, vy in _NBR_VEC:
        outm |= np.maximum(
            np.abs(dx + vx * lat.eta), np.abs(dy + vy * lat.eta)
        ) > r_out + tol
    outer = ann & outm
    ring_idx = np.nonzero(ring)[0]
    if ring_idx.size == 0:
        return 0
    ang = np.arctan2(dy[ring_idx], dx[ring_idx])
    ring_sorted = ring_idx[np.lexsort((mn[ring_idx], ang))]
    keep = np.zeros(ring_sorted.size, dtype=bool)
    for col in (1, -1):
        lab = _site_labels(lat, ann & (cfg.colors == col))
        reach = np.zeros(lab.max() + 1, dtype=bool)
        reach[np.unique(lab[outer & (cfg.colors == col)])] = True
        reach[0] = False
        keep |= (cfg.colors[ring_sorted] == col) & reach[lab[ring_sorted]]
    seq = cfg.colors[ring_sorted][keep]
    if seq.size == 0:
        return 0
    return int(np.sum(seq != np.roll(seq, 1)))


def four_arm(cfg: Configuration, site: int, r_in: float, r_out: float) -> bool:
    """Four arms of alternating color across the annulus around the site."""
    lat = cfg.lattice
    tol = 1e-6 * lat.eta
    if r_in < lat.eta - tol or not r_in < r_out:
        raise ValueError("need eta <= r_in < r_out")
    zx, zy = lat.sites[site]
    d = lat.domain
    pad = r_out + lat.eta  # one extra layer so exterior adjacency exists
    if not (
        zx - pad >= d.x0 - tol and zx + pad <= d.x1 + tol
        and zy - pad >= d.y0 - tol and zy + pad <= d.y1 + tol
    ):
        raise ValueError("annulus not contained in the domain")
    return _arm_strand_count(cfg, site, r_in, r_out) >= 4


def _cyclic_changes(seq) -> int:
    arr = np.asarray(seq)
    if arr.size == 0:
        return 0
    return int(np.sum(arr != np.roll(arr, 1)))


def epsilon_important(cfg: Configuration, eps: float, method: str = "auto") -> np.ndarray:
    """Indices of sites with four alternating arms to the 3*eps square.

    Each site is assigned the eps-grid square containing it (ties at grid
    lines go to the smaller index); arms run from the site itself to the
    boundary of the concentric square of side 3*eps.  Sites whose outer
    square sticks out of the domain are never important.

    Arms may not run through the probed site's own cell.  Both methods
    return the same set: "exact" relabels around every site, while
    "windowed" labels each window once with the site left in — which can
    only raise the alternation count — and relabels only the surviving
    candidates.  "auto" picks "windowed" beyond 2000-cell windows.
    """
    lat = cfg.lattice
    tol = 1e-9 * lat.eta
    if eps < 4 * lat.eta - tol:
        raise ValueError("eps must be at least 4*eta")
    if method == "auto":
        method = "exact" if 9.0 * eps * eps / lat.cell_area <= 2000 else "windowed"
    if method not in ("exact", "windowed"):
        raise ValueError(f"unknown method: {method}")

    x, y = lat.sites[:, 0], lat.sites[:, 1]
    tt = tol / eps
    sqx = np.ceil(x / eps - tt).astype(np.int64) - 1
    sqy = np.ceil(y / eps - tt).astype(np.int64) - 1
    cx = (sqx + 0.5) * eps
    cy = (sqy + 0.5) * eps
    dm = lat.domain
    half = 1.5 * eps
    fits = (
        (cx - half >= dm.x0 - tol) & (cx + half <= dm.x1 + tol)
        & (cy - half >= dm.y0 - tol) & (cy + half <= dm.y1 + tol)
    )
    member = np.zeros(lat.n_sites, dtype=bool)
    if not fits.any():
        return np.empty(0, dtype=np.int64)

    ggrid, j0, c0 = lat.to_grid(cfg.colors, fill=0)  # 0 marks absent cells
    H, W = ggrid.shape
    rh = lat.eta * ROOT3_HALF

    key = (sqx << np.int64(32)) + sqy
    order = np.argsort(key, kind="stable")
    bounds = np.nonzero(np.diff(key[order]))[0] + 1
    starts = np.concatenate([[0], bounds, [lat.n_sites]])

    for g in range(len(starts) - 1):
        sidx = order[starts[g]:starts[g + 1]]
        if not fits[sidx[0]]:
            continue
        wcx = float(cx[sidx[0]])
        wcy = float(cy[sidx[0]])
        jlo = int(np.ceil((wcy - half) / rh - 1e-9))
        jhi = int(np.floor((wcy + half) / rh + 1e-9))
        ilo = int(np.floor((wcx - half) / lat.eta - max(jlo, jhi) / 2.0)) - 1
        ihi = int(np.ceil((wcx + half) / lat.eta - min(jlo, jhi) / 2.0)) + 1
        rlo = max(jlo - j0, 0)
        rhi = min(jhi - j0, H - 1)
        clo = max(ilo - c0, 0)
        chi = min(ihi - c0, W - 1)
        sub = ggrid[rlo:rhi + 1, clo:chi + 1]
        jj = (np.arange(rlo, rhi + 1) + j0)[:, None].astype(float)
        ii = (np.arange(clo, chi + 1) + c0)[None, :].astype(float)
        px = lat.eta * (ii + 0.5 * jj) - wcx
        py = rh * jj - wcy
        region = (np.maximum(np.abs(px), np.abs(py)) <= half + tol) & (sub != 0)
        outm = np.zeros(region.shape, dtype=bool)
        for vx, vy in _NBR_VEC:
            outm |= np.maximum(
                np.abs(px + vx * lat.eta), np.abs(py + vy * lat.eta)
            ) > half + tol
        outer = region & outm

        rloc = lat.ij[sidx, 1] - j0 - rlo
        cloc = lat.ij[sidx, 0] - c0 - clo

        labs = {}
        reach = {}
        for col in (1, -1):
            lab, _ = ndimage.label(region & (sub == col), structure=TRI_STRUCTURE)
            rc = np.zeros(lab.max() + 1, dtype=bool)
            rc[np.unique(lab[outer & (sub == col)])] = True
            rc[0] = False
            labs[col] = lab
            reach[col] = rc

        for s, r0, cl in zip(sidx, rloc, cloc):
            cz = int(sub[r0, cl])
            if method == "windowed":
                # necessary condition: arms through the site's own cell
                # only ever merge arcs, never lower the alternation count
                seq = []
                for di, dj in NEIGHBOR_OFFSETS:
                    col = int(sub[r0 + dj, cl + di])
                    if reach[col][labs[col][r0 + dj, cl + di]]:
                        seq.append(col)
                if _cyclic_changes(seq) < 4:
                    continue
            # confirm: only the site's own color needs relabeling once
            # its cell is removed, the opposite color never used it
            own = region & (sub == cz)
            own[r0, cl] = False
            lab, _ = ndimage.label(own, structure=TRI_STRUCTURE)
            rc = np.zeros(lab.max() + 1, dtype=bool)
            rc[np.unique(lab[outer & own])] = True
            rc[0] = False
            seq = []
            for di, dj in NEIGHBOR_OFFSETS:
                col = int(sub[r0 + dj, cl + di])
                if col == cz:
                    ok = rc[lab[r0 + dj, cl + di]]
                else:
                    ok = reach[col][labs[col][r0 + dj, cl + di]]
                if ok:
                    seq.append(col)
            member[s] = _cyclic_changes(seq) >= 4

    return np.nonzero(member)[0]


def pivotal_measure(cfg: Configuration, eps: float, cal) -> SiteMeasure:
    """Counting measure on eps-important sites, renormalized by alpha4(eta, 1)."""
    if cal is None:
        raise ValueError("pivotal_measure requires an alpha4 calibration; none given")
    lat = cfg.lattice
    idx = epsilon_important(cfg, eps)
    a4 = float(cal.value_at(lat.eta))
    masses = np.zeros(lat.n_sites)
    masses[idx] = lat.cell_area / a4
    return SiteMeasure(masses, lat, label=f"pivotal ε={eps:g}")


def sites_to_csv(lat: Lattice, indices, path) -> None:
    """Write a site list (index and position) as CSV."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["site_index", "x", "y"])
        for s in np.asarray(indices, dtype=np.int64):
            w.writerow([int(s), repr(float(lat.sites[s, 0])), repr(float(lat.sites[s, 1]))])


def d_mod(a: Configuration, b: Configuration, k_max: int) -> float:
    """sup{2^-k : some dyadic-grid quad at scale k is crossed by exactly one}.

    Scans both orientations of every axis-aligned rectangle with corners
    on the 2^-k grid inside the domain, for k = 1..k_max; returns 0 when
    no quad distinguishes the two configurations.
    """
    lat = a.lattice
    if b.lattice is not lat and (
        b.lattice.eta != lat.eta or b.lattice.domain != lat.domain
    ):
        raise ValueError("configurations live on different lattices")
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    d = lat.domain
    levels = []
    total = 0
    for k in range(1, k_max + 1):
        s = 2.0 ** -k
        xs = np.arange(np.ceil(d.x0 / s - 1e-9), np.floor(d.x1 / s + 1e-9) + 1) * s
        ys = np.arange(np.ceil(d.y0 / s - 1e-9), np.floor(d.y1 / s + 1e-9) + 1) * s
        nq = 2 * (len(xs) * (len(xs) - 1) // 2) * (len(ys) * (len(ys) - 1) // 2)
        total += nq
        levels.append((s, xs, ys))
    if total > 10**7:
        raise ValueError(f"quad enumeration too large: {total} quads exceed 10^7")
    if np.array_equal(a.colors, b.colors):
        return 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for s, xs, ys in levels:
            for p in range(len(xs) - 1):
                for pp in range(p + 1, len(xs)):
                    for q in range(len(ys) - 1):
                        for qq in range(q + 1, len(ys)):
                            rect = Rect(xs[p], ys[q], xs[pp], ys[qq])
                            for o in ("h", "v"):
                                quad = RectQuad(rect, o)
                                if crosses(a, quad) != crosses(b, quad):
                                    return s
    return 0.0


# --- four-arm probability calibration -------------------------------------


@dataclass
class Alpha4Calibration:
    """Monte Carlo table of alpha4(r, 1) estimates at one mesh."""

    eta: float
    radii: np.ndarray
    alpha4: np.ndarray
    se: np.ndarray
    n: np.ndarray
    seed: int
    flags: list = field(default_factory=list)

    def __post_init__(self):
        self.radii = np.asarray(self.radii, dtype=float)
        self.alpha4 = np.asarray(self.alpha4, dtype=float)
        self.se = np.asarray(self.se, dtype=float)
        self.n = np.asarray(self.n, dtype=np.int64)
        if not self.flags:
            self.flags = [None] * self.radii.size
        if not (
            self.radii.size == self.alpha4.size == self.se.size
            == self.n.size == len(self.flags)
        ):
            raise ValueError("calibration columns must have equal length")
        order = np.argsort(self.radii)
        self.radii = self.radii[order]
        self.alpha4 = self.alpha4[order]
        self.se = self.se[order]
        self.n = self.n[order]
        self.flags = [self.flags[k] for k in order]
        if np.any(self.alpha4 <= 0.0) or np.any(self.alpha4 > 1.0 + 1e-12):
            raise ValueError("alpha4 estimates must lie in (0, 1]")

    def slope(self) -> float:
        """Fitted log-log slope over the non-degenerate table entries.

        Entries at small inner-to-outer ratios sit near saturation and
        flatten the fit, so the decaying tail (<= 0.5) is preferred when
        it has at least two points.
        """
        m = (self.radii < 1.0) & (self.alpha4 <= 0.5)
        if int(m.sum()) < 2:
            return 1.25
        return float(np.polyfit(np.log(self.radii[m]), np.log(self.alpha4[m]), 1)[0])

    def value_at(self, r: float) -> float:
        """Log-log interpolation; slope extrapolation outside the table."""
        if r <= 0.0:
            raise ValueError("radius must be positive")
        if r >= 1.0:
            return 1.0
        if r < self.radii[0]:
            return float(self.alpha4[0] * (r / self.radii[0]) ** self.slope())
        if r > self.radii[-1]:
            return float(min(1.0, self.alpha4[-1] * (r / self.radii[-1]) ** self.slope()))
        return float(np.exp(np.interp(np.log(r), np.log(self.radii), np.log(self.alpha4))))

    def to_json(self, path) -> None:
        payload = {
            "eta": self.eta,
            "seed": int(self.seed),
            "created_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "entries": [
                {
                    "r": float(r),
                    "alpha4": float(a),
                    "se": float(s),
                    "n": int(n),
                    "flag": f,
                }
                for r, a, s, n, f in zip(self.radii, self.alpha4, self.se, self.n, self.flags)
            ],
        }
        tmp = f"{path}.tmp{os.getpid()}"
        with open(tmp, "w") as fh:
            json.dump(payload, fh, indent=1)
        os.replace(tmp, path)

    @classmethod
    def from_json(cls, path) -> "Alpha4Calibration":
        with open(path) as fh:
            payload = json.load(fh)
        ent = payload["entries"]
        return cls(
            eta=float(payload["eta"]),
            radii=np.array([e["r"] for e in ent]),
            alpha4=np.array([e["alpha4"] for e in ent]),
            se=np.array([e["se"] for e in ent]),
            n=np.array([e["n"] for e in ent]),
            seed=int(payload["seed"]),
            flags=[e.get("flag") for e in ent],
        )


def cache_dir(override=None) -> str:
    """Calibration cache directory (override, $LDP_CACHE_DIR, or default)."""
    return (
        override
        or os.environ.get("LDP_CACHE_DIR")
        or os.path.join(os.path.expanduser("~"), ".cache", "ldperc")
    )


def calibrate_alpha4(
    eta: float,
    radii,
    n_samples: int,
    seed: int,
    cache_dir_override=None,
    chunk: int = 2000,
) -> Alpha4Calibration:
    """Estimate alpha4(r, 1) for dyadic radii by lazy interface walking.

    All radii share one sample stream, so the table is exactly monotone
    in r realization by realization.  Results are cached on disk keyed by
    (eta, n_samples, seed); additional radii reuse cached entries and are
    merged in.  r = 1 is the degenerate annulus, probability 1.
    """
    if not 0.0 < eta < 1.0:
        raise ValueError(f"eta out of (0, 1): {eta}")
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    rs = sorted({float(r) for r in np.atleast_1d(np.asarray(radii, dtype=float))})
    if not rs:
        raise ValueError("no radii given")
    for r in rs:
        if r <= 0.0 or abs(np.log2(r) - round(np.log2(r))) > 1e-9:
            raise ValueError(f"radii must be dyadic in (0, 1]: {r}")
        if r > 1.0:
            raise ValueError(f"radius exceeds the unit outer scale: {r}")
        if r < 1.0 and r < 8.0 * eta - 1e-12:
            raise ValueError(f"radius {r} below 8*eta")
        if r < 1.0 and r / eta + 4.0 > 1.0 / eta:
            raise ValueError(f"radius {r} too close to the unit outer scale")

    cdir = cache_dir(cache_dir_override)
    os.makedirs(cdir, exist_ok=True)
    path = os.path.join(cdir, f"alpha4_eta{eta:.12g}_n{n_samples}_seed{seed}.json")
    entries = {}
    if os.path.exists(path):
        old = Alpha4Calibration.from_json(path)
        for k in range(old.radii.size):
            entries[float(old.radii[k])] = (
                float(old.alpha4[k]), float(old.se[k]), int(old.n[k]), old.flags[k],
            )

    todo = [r for r in rs if r < 1.0 and r not in entries]
    if todo:
        ru = np.array([r / eta for r in todo])
        hits = np.zeros(len(todo), dtype=np.int64)
        t0 = time.time()
        done = 0
        while done < n_samples:
            hi = min(done + chunk, n_samples)
            _walker.mc_chunk(np.uint64(seed % 2**64), done, hi, 1.0 / eta, ru, 1e-6, hits)
            done = hi
            log.debug("alpha4 eta=%g: %d/%d samples", eta, done, n_samples)
        p = hits / n_samples
        se = np.sqrt(p * (1.0 - p) / n_samples)
        for k, r in enumerate(todo):
            flag = None
            if hits[k] == 0:
                # rule-of-three upper confidence bound
                p[k] = 3.0 / n_samples
                se[k] = p[k]
                flag = "zero-successes"
            entries[r] = (float(p[k]), float(se[k]), int(n_samples), flag)
        log.info(
            "alpha4 eta=%g: %d radii x %d samples in %.1fs",
            eta, len(todo), n_samples, time.time() - t0,
        )
    if any(r >= 1.0 for r in rs):
        entries.setdefault(1.0, (1.0, 0.0, int(n_samples), "degenerate"))

    keys = sorted(entries)
    cal = Alpha4Calibration(
        eta=eta,
        radii=np.array(keys),
        alpha4=np.array([entries[r][0] for r in keys]),
        se=np.array([entries[r][1] for r in keys]),
        n=np.array([entries[r][2] for r in keys]),
        seed=seed,
        flags=[entries[r][3] for r in keys],
    )
    cal.to_json(path)
    return cal


def hashed_configuration(lat: Lattice, skey: int) -> Configuration:
    """The coloring the calibration walker sees for one sample key."""
    colors = _walker.hash_colors(np.uint64(skey % 2**64), lat.ij)
    return Configuration(colors, lat)
